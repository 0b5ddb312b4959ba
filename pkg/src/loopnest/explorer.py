"""Sweep orchestration: run many (layer, ordering, config, threads) points.

A sweep is the cross product of the axes in a `DesignSpace`.  Every point
is one simulated run producing one CSV row; rows are keyed by
(layer, perm_lex, config, threads) and the finished file is always sorted
by that key, so the bytes on disk do not depend on worker count or
completion order.  A JSON sidecar records the space itself plus a hash so
downstream analysis can verify what produced the file.

Resume semantics: rows already present in the output file are not
recomputed.  While running, freshly computed rows are appended to
`<out>.partial`; the file is promoted (merged, sorted, rewritten) only on
success, so a crash leaves the partial marker behind instead of a
half-written result.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .cachesim import (
    CacheConfig,
    ConfigError,
    config_from_dict,
    config_to_dict,
    simulate,
    two_level,
)
from .conv import LayerParams, LoopDim, check_perm
from .fastpath import simulate_fast, supports
from .permindex import all_perms, index_of, perm_of
from .tracegen import SparsityOptions, TraceOptions, generate_trace

RESULT_COLUMNS = (
    "layer",
    "perm_lex",
    "perm_ham",
    "config",
    "threads",
    "cycles",
    "l1_misses",
    "l2_misses",
    "refs",
    "ticks",
)

# buffered-trace ceiling for clairvoyant replacement; ~64M events is a few
# GB of event objects, already unpleasant
_OPT_EVENT_CAP = 1 << 26

WORKERS_ENV = "LOOPNEST_WORKERS"


@dataclass(frozen=True)
class DesignSpace:
    """The cross product a sweep runs over.

    `layers` pairs a stable id with the shape; synthetic presets use the
    compact param key as the id.  `perms` holds explicit orderings,
    outermost first.
    """

    layers: tuple[tuple[str, LayerParams], ...]
    perms: tuple[tuple[LoopDim, ...], ...]
    configs: tuple[tuple[str, CacheConfig], ...]
    thread_counts: tuple[int, ...] = (1,)
    instr_limit: int | None = None
    partial_sums: bool = True
    body_ticks: int = 4
    sparsity: SparsityOptions | None = None

    def __post_init__(self):
        if not (self.layers and self.perms and self.configs and self.thread_counts):
            raise ValueError("every design-space axis must be non-empty")
        ids = [name for name, _ in self.layers]
        if len(set(ids)) != len(ids):
            raise ValueError("layer ids must be unique")
        names = [name for name, _ in self.configs]
        if len(set(names)) != len(names):
            raise ValueError("config names must be unique")
        for p in self.perms:
            check_perm(p)
        if any(t < 1 for t in self.thread_counts):
            raise ValueError("thread counts must be >= 1")

    @property
    def n_points(self) -> int:
        return (
            len(self.layers) * len(self.perms) * len(self.configs) * len(self.thread_counts)
        )

    def trace_options(self, threads: int) -> TraceOptions:
        return TraceOptions(
            partial_sums=self.partial_sums,
            threads=threads,
            body_ticks=self.body_ticks,
            instr_limit=self.instr_limit,
            sparsity=self.sparsity,
        )

    def describe(self) -> dict:
        """JSON-able record of the space, stable across runs."""
        return {
            "layers": [[name, layer.key] for name, layer in self.layers],
            "perm_lex_indices": [index_of(p, "lex") for p in self.perms],
            "configs": [[name, config_to_dict(cfg)] for name, cfg in self.configs],
            "thread_counts": list(self.thread_counts),
            "instr_limit": self.instr_limit,
            "partial_sums": self.partial_sums,
            "body_ticks": self.body_ticks,
            "sparsity": None
            if self.sparsity is None
            else {
                "weight_density": self.sparsity.weight_density,
                "activation_density": self.sparsity.activation_density,
                "seed": self.sparsity.seed,
            },
        }

    def space_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# Eight real layer shapes: seven from SqueezeNet plus one compact first
# convolution, param order (out, in, w, h, kw, kh).
SQUEEZENET_LAYERS: tuple[tuple[str, LayerParams], ...] = (
    ("initial-conf", LayerParams(256, 32, 28, 28, 3, 3)),
    ("fire3-conv3x3-2", LayerParams(64, 16, 55, 55, 3, 3)),
    ("fire4-conv1x1-1", LayerParams(32, 128, 55, 55, 1, 1)),
    ("fire4-conv1x1-2", LayerParams(128, 32, 55, 55, 1, 1)),
    ("fire7-conv1x1-1", LayerParams(48, 384, 27, 27, 1, 1)),
    ("fire9-conv1x1-1", LayerParams(64, 512, 13, 13, 1, 1)),
    ("fire9-conv3x3-2", LayerParams(256, 64, 13, 13, 3, 3)),
    ("conv-final", LayerParams(1000, 512, 13, 13, 1, 1)),
)


def synthetic_layers(
    channel_values: Sequence[int], image_values: Sequence[int], kernel_values: Sequence[int]
) -> tuple[tuple[str, LayerParams], ...]:
    """Square grid: out = in = c, img square, kernel square."""
    out = []
    for c in channel_values:
        for s in image_values:
            for k in kernel_values:
                layer = LayerParams(c, c, s, s, k, k)
                out.append((layer.key, layer))
    return tuple(out)


_PRESET_GRIDS = {
    # 6 x 6 x 6 synthetic grid, single thread
    "synthetic-216": (range(10, 211, 40), range(10, 211, 40), range(1, 12, 2)),
    # reduced 3 x 3 x 4 grid used for the multi-thread runs
    "synthetic-36": ((10, 90, 170), (10, 90, 170), (1, 3, 9, 11)),
}

# per-preset defaults: (thread_counts, instr_limit)
_PRESET_DEFAULTS = {
    "squeezenet": ((1,), 500_000_000),
    "synthetic-216": ((1,), 500_000_000),
    "synthetic-36": ((8,), 100_000_000),
}


def preset_layers(name: str) -> tuple[tuple[str, LayerParams], ...]:
    if name == "squeezenet":
        return SQUEEZENET_LAYERS
    if name in _PRESET_GRIDS:
        return synthetic_layers(*_PRESET_GRIDS[name])
    raise ValueError(
        f"unknown layer preset {name!r}; expected squeezenet, synthetic-216 or synthetic-36"
    )


def preset_space(
    name: str,
    *,
    configs: Sequence[tuple[str, CacheConfig]] | None = None,
    thread_counts: Sequence[int] | None = None,
    instr_limit: int | None = ...,  # type: ignore[assignment]
    perms: Sequence[Sequence[LoopDim]] | None = None,
    seed: int = 1,
    **trace_kwargs,
) -> DesignSpace:
    """A preset design space; every axis can be overridden."""
    default_threads, default_limit = _PRESET_DEFAULTS[name]
    if configs is None:
        configs = (("base", two_level(64, 512, seed=seed)),)
    return DesignSpace(
        layers=preset_layers(name),
        perms=tuple(check_perm(p) for p in perms)
        if perms is not None
        else tuple(all_perms(6)),
        configs=tuple(configs),
        thread_counts=tuple(thread_counts) if thread_counts is not None else default_threads,
        instr_limit=default_limit if instr_limit is ... else instr_limit,
        **trace_kwargs,
    )


def load_layers_file(path: str | os.PathLike) -> tuple[tuple[str, LayerParams], ...]:
    """Read layers from a small text file.

    One layer per line, `name: out,in,w,h,kw,kh` or just the six params
    (the key doubles as the name); blank lines and `#` comments ignored.
    """
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, params = line.rpartition(":")
        try:
            layer = LayerParams.from_key(params.strip())
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
        out.append((name.strip() or layer.key, layer))
    if not out:
        raise ValueError(f"{path}: no layers found")
    return tuple(out)


def _dense_event_bound(layer: LayerParams, opts: TraceOptions) -> int:
    # refs + ticks if nothing is masked or hoisted: 4 refs + body ticks
    # (+1 atomic) per iteration; a safe ceiling for every mode
    per_iter = 4 + opts.body_ticks + 1
    return layer.iteration_count * per_iter


def check_opt_feasible(space: DesignSpace) -> None:
    """Reject clairvoyant replacement when the trace cannot be buffered."""
    if not any(cfg.has_opt for _, cfg in space.configs):
        return
    for _, layer in space.layers:
        for t in space.thread_counts:
            opts = space.trace_options(t)
            bound = _dense_event_bound(layer, opts)
            if opts.instr_limit is not None:
                bound = min(bound, opts.instr_limit + per_turn_slack(opts))
            if bound > _OPT_EVENT_CAP:
                raise ConfigError(
                    "opt replacement needs the whole trace in memory; layer "
                    f"{layer.key} can emit ~{bound:,} events (cap {_OPT_EVENT_CAP:,}). "
                    "Set instr_limit or drop the opt config."
                )


def per_turn_slack(opts: TraceOptions) -> int:
    # instr_limit is checked at turn boundaries; one turn emits at most this
    return 7 + opts.body_ticks


def run_point(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    config: CacheConfig,
    opts: TraceOptions,
) -> dict[str, int]:
    """Simulate one point and map the stats onto result columns.

    The reported `cycles` is the wall-clock estimate: the slowest logical
    thread's cycle total (identical to the additive total for one thread).
    """
    dims = check_perm(perm)
    if supports(config):
        stats = simulate_fast(layer, dims, config, opts)
    else:
        events = generate_trace(layer, dims, opts=opts)
        if config.has_opt:
            events = list(events)
        stats = simulate(events, config)
    row = stats.to_row()
    return {
        "cycles": row["wall_cycles"],
        "l1_misses": row["l1_misses"],
        "l2_misses": row["l2_misses"],
        "refs": row["refs"],
        "ticks": row["ticks"],
    }


def _worker(task) -> tuple[tuple[str, int, str, int], dict[str, int]]:
    layer_id, layer, lex_idx, config_name, config, threads, opts = task
    perm = perm_of(lex_idx, "lex")
    return (layer_id, lex_idx, config_name, threads), run_point(layer, perm, config, opts)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return workers


def read_results(path: str | os.PathLike) -> list[dict]:
    """Load a result CSV back into typed rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(
                f"{path}: unexpected columns {reader.fieldnames}; want {list(RESULT_COLUMNS)}"
            )
        rows = []
        for rec in reader:
            row = dict(rec)
            for col in RESULT_COLUMNS:
                if col not in ("layer", "config"):
                    row[col] = int(row[col])
            rows.append(row)
    return rows


def _row_key(row: dict) -> tuple[str, int, str, int]:
    return (row["layer"], int(row["perm_lex"]), row["config"], int(row["threads"]))


def _write_sorted(path: Path, rows: Iterable[dict]) -> int:
    ordered = sorted(rows, key=_row_key)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(ordered)
    os.replace(tmp, path)
    return len(ordered)


def run_sweep(
    space: DesignSpace,
    out: str | os.PathLike,
    workers: int | None = None,
    progress=None,
) -> dict:
    """Run every point of the space, writing the sorted result CSV.

    Returns a summary dict.  `progress`, if given, is called as
    progress(done, total) after every finished point.
    """
    check_opt_feasible(space)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(workers)

    existing: dict[tuple, dict] = {}
    if out_path.exists():
        for row in read_results(out_path):
            existing[_row_key(row)] = row

    ham_of = {index_of(p, "lex"): index_of(p, "hamiltonian") for p in space.perms}
    tasks = []
    for layer_id, layer in space.layers:
        for perm in space.perms:
            lex_idx = index_of(perm, "lex")
            for config_name, config in space.configs:
                for threads in space.thread_counts:
                    key = (layer_id, lex_idx, config_name, threads)
                    if key not in existing:
                        tasks.append(
                            (
                                layer_id,
                                layer,
                                lex_idx,
                                config_name,
                                config,
                                threads,
                                space.trace_options(threads),
                            )
                        )

    t0 = time.perf_counter()
    partial_path = out_path.with_suffix(out_path.suffix + ".partial")
    new_rows: list[dict] = []
    done = 0
    total = len(tasks)
    with open(partial_path, "w", newline="") as partial:
        writer = csv.DictWriter(partial, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()

        def finish(key, metrics):
            nonlocal done
            layer_id, lex_idx, config_name, threads = key
            row = {
                "layer": layer_id,
                "perm_lex": lex_idx,
                "perm_ham": ham_of[lex_idx],
                "config": config_name,
                "threads": threads,
                **metrics,
            }
            new_rows.append(row)
            writer.writerow(row)
            done += 1
            if progress is not None:
                progress(done, total)

        if workers == 1 or not tasks:
            for task in tasks:
                key, metrics = _worker(task)
                finish(key, metrics)
        else:
            # warm the compiled path before forking so children inherit it
            _warmup()
            chunk = max(1, min(64, total // (workers * 4) or 1))
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for key, metrics in pool.map(_worker, tasks, chunksize=chunk):
                    finish(key, metrics)

    n_rows = _write_sorted(out_path, list(existing.values()) + new_rows)
    meta = {
        "space": space.describe(),
        "space_sha256": space.space_hash(),
        "columns": list(RESULT_COLUMNS),
        "rows": n_rows,
    }
    meta_path = out_path.with_suffix(out_path.suffix + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    partial_path.unlink(missing_ok=True)
    return {
        "out": str(out_path),
        "meta": str(meta_path),
        "rows": n_rows,
        "points_total": space.n_points,
        "points_run": len(new_rows),
        "points_skipped": space.n_points - total,
        "seconds": round(time.perf_counter() - t0, 3),
        "workers": workers,
    }


def _warmup() -> None:
    layer = LayerParams(2, 2, 2, 2, 1, 1)
    run_point(layer, tuple(LoopDim), two_level(16, 128), TraceOptions())


TILE_COLUMNS = (
    "compute_tiles",
    "l2_tiles",
    "threads",
    "l2_kb",
    "cycles",
    "l1_misses",
    "l2_misses",
    "refs",
    "ticks",
)


def tile_sweep(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    total_tiles: int = 16,
    bank_kb_per_tile: int = 64,
    l1_kb: int = 64,
    instr_limit: int | None = None,
    partial_sums: bool = True,
    body_ticks: int = 4,
    seed: int = 1,
) -> list[dict]:
    """Trade compute tiles for shared L2 capacity at full utilisation.

    Each tile is 8 cores or one 64 KB L2 bank; a split of c compute tiles
    leaves (total - c) tiles of cache.  Runs every split with threads = 8c
    and L2 size = (total - c) * bank size, keeping L1 fixed.
    """
    if total_tiles < 2:
        raise ValueError("need at least 2 tiles to split")
    dims = check_perm(perm)
    rows = []
    for compute in range(1, total_tiles):
        l2_tiles = total_tiles - compute
        threads = 8 * compute
        config = two_level(l1_kb, l2_tiles * bank_kb_per_tile, seed=seed)
        opts = TraceOptions(
            partial_sums=partial_sums,
            threads=threads,
            body_ticks=body_ticks,
            instr_limit=instr_limit,
        )
        metrics = run_point(layer, dims, config, opts)
        rows.append(
            {
                "compute_tiles": compute,
                "l2_tiles": l2_tiles,
                "threads": threads,
                "l2_kb": l2_tiles * bank_kb_per_tile,
                **metrics,
            }
        )
    return rows


def load_config_file(path: str | os.PathLike) -> list[tuple[str, CacheConfig]]:
    """Read named cache configs from a JSON file.

    Format: {"name": {"mem_latency": 30, "levels": [{...}, {...}]}, ...}
    with level fields size_bytes/block_bytes/assoc/latency/policy/seed.
    """
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not data:
        raise ValueError(f"{path}: expected a non-empty object of named configs")
    return [(name, config_from_dict(cfg)) for name, cfg in sorted(data.items())]
