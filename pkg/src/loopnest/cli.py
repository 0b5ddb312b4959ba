"""Command-line front end: every pipeline stage as one subcommand.

Machine-readable output (CSV by default, JSON with --format json) goes to
stdout; human-oriented progress and summaries go to stderr.  All
randomness flows from --seed (default 1).  Exit status: 0 success, 1
internal error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import analysis, fastpath
from .cachesim import (
    CacheConfig,
    ConfigError,
    preset_config,
    simulate,
    two_level,
)
from .codegen import CodegenOptions, emit_c, source_filename
from .conv import (
    LayerParams,
    LoopDim,
    oracle_convolve,
    parse_perm,
    perm_str,
    permuted_convolve,
)
from .explorer import (
    DesignSpace,
    load_config_file,
    load_layers_file,
    preset_space,
    read_results,
    run_sweep,
    tile_sweep,
)
from .permindex import all_perms, index_of, perm_of
from .tracegen import SparsityOptions, TraceOptions, dump_trace, generate_trace

_PRESETS = ("squeezenet", "synthetic-216", "synthetic-36")
_CONFIG_PRESETS = ("base", "small", "mid", "big")


def _human(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_layer(text: str) -> LayerParams:
    try:
        return LayerParams.from_key(text)
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(
            f"layer must be out,in,img_w,img_h,ker_w,ker_h: {exc}"
        ) from exc


def _add_perm_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--perm-lex", type=int, metavar="N", help="ordering by lex index")
    group.add_argument(
        "--perm-ham", type=int, metavar="N", help="ordering by hamiltonian-path index"
    )
    group.add_argument(
        "--perm", metavar="DIMS", help="ordering as dim names, e.g. y,x,o,i,ky,kx"
    )


def _perm_from(args) -> tuple[LoopDim, ...]:
    if args.perm is not None:
        return parse_perm(args.perm)
    if args.perm_ham is not None:
        return perm_of(args.perm_ham, "hamiltonian")
    return perm_of(args.perm_lex or 0, "lex")


def _add_trace_flags(parser: argparse.ArgumentParser, threads_default: int = 1) -> None:
    parser.add_argument("--threads", type=int, default=threads_default)
    parser.add_argument("--body-ticks", type=int, default=4, metavar="K")
    parser.add_argument(
        "--dense",
        action="store_true",
        help="read-modify-write the output every iteration instead of buffering partial sums",
    )
    parser.add_argument("--limit", type=int, default=None, metavar="N", help="event cap")
    parser.add_argument(
        "--sparsity",
        metavar="WD[,AD]",
        help="weight[,activation] density in (0,1]; masked work is skipped",
    )


def _trace_opts(args, seed: int) -> TraceOptions:
    sparsity = None
    if getattr(args, "sparsity", None):
        parts = [float(p) for p in args.sparsity.split(",")]
        if len(parts) == 1:
            parts.append(1.0)
        sparsity = SparsityOptions(
            weight_density=parts[0], activation_density=parts[1], seed=seed
        )
    return TraceOptions(
        partial_sums=not args.dense,
        threads=args.threads,
        body_ticks=args.body_ticks,
        instr_limit=args.limit,
        sparsity=sparsity,
    )


def _parse_config(text: str, seed: int) -> tuple[str, CacheConfig]:
    """preset name | L1KB:L2KB | @file.json[:name]."""
    if text.startswith("@"):
        spec, _, name = text[1:].partition(":")
        named = load_config_file(spec)
        if name:
            for n, cfg in named:
                if n == name:
                    return n, cfg
            raise ConfigError(f"config {name!r} not found in {spec}")
        if len(named) != 1:
            raise ConfigError(
                f"{spec} defines {len(named)} configs; pick one with @{spec}:NAME"
            )
        return named[0]
    if text in _CONFIG_PRESETS:
        return text, preset_config(text, seed=seed)
    if ":" in text:
        l1_kb, l2_kb = (int(p) for p in text.split(":", 1))
        return f"{l1_kb}:{l2_kb}", two_level(l1_kb, l2_kb, seed=seed)
    raise ConfigError(
        f"unknown config {text!r}; expected one of {_CONFIG_PRESETS}, L1KB:L2KB, or @file.json"
    )


def _parse_perm_selection(text: str, seed: int):
    if text == "all":
        return tuple(all_perms(6))
    if text.startswith("sample:"):
        k = int(text.split(":", 1)[1])
        rng = np.random.default_rng(seed)
        picks = rng.choice(720, size=k, replace=False)
        return tuple(perm_of(int(i), "lex") for i in sorted(picks))
    return tuple(perm_of(int(p), "lex") for p in text.split(","))


def _emit_rows(rows, header, fmt: str, fh=None) -> None:
    fh = fh or sys.stdout
    if fmt == "json":
        json.dump([dict(zip(header, r)) for r in rows], fh, indent=2, default=str)
        fh.write("\n")
    else:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _emit_obj(obj: dict, fmt: str, fh=None) -> None:
    fh = fh or sys.stdout
    if fmt == "json":
        json.dump(obj, fh, indent=2, default=str)
        fh.write("\n")
    else:
        writer = csv.writer(fh)
        writer.writerow(obj.keys())
        writer.writerow(obj.values())


# ---------------------------------------------------------------- commands


def cmd_perms(args) -> int:
    if not 1 <= args.n <= 8:
        raise ValueError("--n must be in 1..8")
    rows = []
    for lex in range(math.factorial(args.n)):
        perm = perm_of(lex, "lex", n=args.n)
        order = (
            perm_str(perm)
            if args.n == 6
            else "-".join(str(int(d)) for d in perm)
        )
        rows.append(
            (lex, index_of(perm, "revlex"), index_of(perm, "hamiltonian"), order)
        )
    _emit_rows(rows, ("lex", "revlex", "hamiltonian", "order"), args.format)
    return 0


def cmd_trace(args) -> int:
    perm = _perm_from(args)
    opts = _trace_opts(args, args.seed)
    events = generate_trace(args.layer, perm, opts=opts)
    n = dump_trace(events, args.out, fmt=args.format)
    _human(f"wrote {n} events for {args.layer.key} [{perm_str(perm)}]")
    print(args.out)
    return 0


def cmd_simulate(args) -> int:
    perm = _perm_from(args)
    opts = _trace_opts(args, args.seed)
    config = _parse_config(args.config, args.seed)[1]
    if fastpath.supports(config):
        stats = fastpath.simulate_fast(args.layer, perm, config, opts, window=args.window)
    else:
        events = generate_trace(args.layer, perm, opts=opts)
        if config.has_opt:
            events = list(events)
        stats = simulate(events, config, window=args.window)
    row = stats.to_row()
    row = {
        "layer": args.layer.key,
        "perm_lex": index_of(perm, "lex"),
        "perm_ham": index_of(perm, "hamiltonian"),
        "order": perm_str(perm),
        **row,
    }
    _emit_obj(row, args.format)
    if args.window and args.ipc_out and stats.ipc_series is not None:
        with open(args.ipc_out, "w", newline="") as fh:
            _emit_rows(stats.ipc_series, ("instr", "ipc"), "csv", fh)
        _human(f"ipc series -> {args.ipc_out}")
    hits = stats.refs - stats.memory_accesses
    _human(
        f"cycles={stats.cycles} wall={stats.wall_cycles} refs={stats.refs} "
        f"cache-hit={hits / max(stats.refs, 1):.3f}"
    )
    return 0


def cmd_emit_c(args) -> int:
    perm = _perm_from(args)
    opts = CodegenOptions(
        threads=args.threads,
        partial_sums=not args.dense,
        emit_validation=args.validation,
    )
    src = emit_c(args.layer, perm, opts)
    if args.out == "-":
        sys.stdout.write(src)
        return 0
    path = args.out
    if os.path.isdir(path):
        path = os.path.join(path, source_filename(args.layer, perm))
    with open(path, "w") as fh:
        fh.write(src)
    print(path)
    return 0


def cmd_sweep(args) -> int:
    seed = args.seed
    configs = tuple(_parse_config(c, seed) for c in args.configs.split(","))
    perms = _parse_perm_selection(args.perms, seed)
    threads = tuple(int(t) for t in args.threads.split(",")) if args.threads else None
    limit = None if args.limit in (None, "none") else int(args.limit)
    trace_kwargs = {}
    if args.sparsity:
        parts = [float(p) for p in args.sparsity.split(",")]
        if len(parts) == 1:
            parts.append(1.0)
        trace_kwargs["sparsity"] = SparsityOptions(parts[0], parts[1], seed=seed)
    if args.preset:
        space = preset_space(
            args.preset,
            configs=configs,
            thread_counts=threads,
            instr_limit=limit if args.limit is not None else ...,
            perms=perms,
            seed=seed,
            partial_sums=not args.dense,
            body_ticks=args.body_ticks,
            **trace_kwargs,
        )
    else:
        space = DesignSpace(
            layers=load_layers_file(args.layers_file),
            perms=perms,
            configs=configs,
            thread_counts=threads or (1,),
            instr_limit=limit,
            partial_sums=not args.dense,
            body_ticks=args.body_ticks,
            **trace_kwargs,
        )
    t0 = time.time()
    last = [0.0]

    def progress(done: int, total: int) -> None:
        now = time.time()
        if now - last[0] >= 5 or done == total:
            last[0] = now
            _human(f"  {done}/{total} points ({now - t0:.0f}s)")

    summary = run_sweep(space, args.out, workers=args.workers, progress=progress)
    _human(
        f"{summary['points_run']} computed + {summary['points_skipped']} reused "
        f"-> {summary['rows']} rows in {summary['seconds']:.1f}s"
    )
    _emit_obj(summary, args.format)
    return 0


def cmd_tile_sweep(args) -> int:
    perm = _perm_from(args)
    rows = tile_sweep(
        args.layer,
        perm,
        total_tiles=args.total_tiles,
        bank_kb_per_tile=args.bank_kb,
        l1_kb=args.l1_kb,
        instr_limit=args.limit,
        partial_sums=not args.dense,
        body_ticks=args.body_ticks,
        seed=args.seed,
    )
    header = list(rows[0].keys())
    body = [[r[c] for c in header] for r in rows]
    if args.out and args.out != "-":
        with open(args.out, "w", newline="") as fh:
            _emit_rows(body, header, "csv", fh)
        print(args.out)
    else:
        _emit_rows(body, header, args.format)
    return 0


def cmd_validate(args) -> int:
    rng = np.random.default_rng(args.seed)
    layers = [
        LayerParams(*(int(rng.integers(1, args.max_extent + 1)) for _ in range(6)))
        for _ in range(args.layers)
    ]
    layers.append(LayerParams(1, 1, 1, 1, 1, 1))
    layers.append(LayerParams(*([args.max_extent] * 6)))
    grids = []
    for lay in layers:
        inp = rng.integers(-9, 10, size=(lay.in_channels, lay.padded_h, lay.padded_w))
        wts = rng.integers(
            -9, 10, size=(lay.out_channels, lay.in_channels, lay.ker_h, lay.ker_w)
        )
        grids.append((inp, wts, oracle_convolve(lay, inp, wts)))
    bad = []
    total = math.factorial(6)
    for lex in range(total):
        perm = perm_of(lex, "lex")
        for lay, (inp, wts, want) in zip(layers, grids):
            got = permuted_convolve(lay, inp, wts, perm)
            if not np.array_equal(got, want):
                bad.append((lex, lay.key))
    ok = total - len({lex for lex, _ in bad})
    print(f"{ok}/{total} permutations match oracle")
    if bad:
        _human(f"mismatches: {bad[:10]}")
        return 1
    return 0


# ------------------------------------------------------------- analyze sub


def cmd_analyze_rank(args) -> int:
    rows = read_results(args.results)
    table, ranked = analysis.rank_permutations(rows, args.metric)
    header = ("rank", "perm_lex", "perm_ham", "order", "mean_speedup", "min_speedup")
    if args.out:
        analysis.export_ranking(rows, args.out, args.metric)
        _human(f"full ranking -> {args.out}")
    _emit_rows(
        [[r[c] for c in header] for r in ranked[: args.top]], header, args.format
    )
    _human(
        f"{len(table.perm_lex)} orderings x {len(table.cases)} cases; "
        f"top mean {ranked[0]['mean_speedup']:.4f} ({ranked[0]['order']})"
    )
    return 0


def cmd_analyze_pairs(args) -> int:
    rows = read_results(args.results)
    combos = analysis.best_of_k(rows, args.k, metric=args.metric, limit=args.limit)
    header = ("rank", "perms_lex", "orders", "mean_speedup", "min_speedup")
    body = [
        (
            i,
            ";".join(str(p) for p in c["perms_lex"]),
            c["orders"],
            f"{c['mean_speedup']:.6f}",
            f"{c['min_speedup']:.6f}",
        )
        for i, c in enumerate(combos, 1)
    ]
    if args.out:
        analysis.export_pairs(rows, args.out, k=args.k, metric=args.metric, limit=args.limit)
        _human(f"combinations -> {args.out}")
    _emit_rows(body[: args.top], header, args.format)
    return 0


def cmd_analyze_sample_size(args) -> int:
    if args.g is not None:
        if "/" in args.g:
            num, den = args.g.split("/", 1)
            g = float(num) / float(den)
        else:
            g = float(args.g)
        info = {"g": g, "confidence": args.confidence, "m": analysis.sample_size(g, args.confidence)}
    else:
        rows = read_results(args.results)
        info = analysis.random_sampling_requirement(
            rows, args.good, args.confidence, args.metric
        )
        info["worst_case"] = "/".join(str(v) for v in info["worst_case"])
    if args.mc and info["m"] is not None:
        rate, se = analysis.mc_success_rate(
            info["g"], info["m"], trials=args.trials, seed=args.seed
        )
        info["mc_rate"] = rate
        info["mc_se"] = se
        info["closed_form"] = 1.0 - (1.0 - info["g"]) ** info["m"]
    _emit_obj(info, args.format)
    return 0


def cmd_analyze_stability(args) -> int:
    rows = read_results(args.results)
    path, spearman = analysis.export_stability(rows, args.out, args.axis, args.metric)
    if args.plot_script:
        analysis.write_plot_script("stability", path, path + ".plot.py")
        _human(f"plot recipe -> {path}.plot.py")
    _emit_rows(
        [(a, b, f"{rho:.6f}") for a, b, rho in spearman],
        ("group_a", "group_b", "spearman"),
        args.format,
    )
    _human(f"parallel-coordinates data -> {path}")
    return 0


def cmd_analyze_reuse(args) -> int:
    perm = _perm_from(args)
    opts = TraceOptions(
        partial_sums=not args.dense,
        threads=args.threads,
        body_ticks=args.body_ticks,
        instr_limit=args.limit,
    )
    addresses = fastpath.trace_addresses(args.layer, perm, opts)
    rm = analysis.reuse_map(addresses, offset_bits=args.offset_bits, window=args.window)
    analysis.export_reuse(rm, args.out)
    if args.plot_script:
        analysis.write_plot_script("reuse", args.out, args.out + ".plot.py")
    _emit_obj(
        {
            "accesses": len(rm.word_ranks),
            "distinct_words": rm.distinct_words,
            "distinct_blocks": rm.distinct_blocks,
            "peak_window_blocks": rm.peak_working_set,
            "offset_bits": rm.offset_bits,
            "window": rm.window,
            "out": args.out,
        },
        args.format,
    )
    return 0


def cmd_analyze_ipc(args) -> int:
    perm = _perm_from(args)
    opts = _trace_opts(args, args.seed)
    config = _parse_config(args.config, args.seed)[1]
    if fastpath.supports(config):
        stats = fastpath.simulate_fast(args.layer, perm, config, opts, window=args.window)
    else:
        events = generate_trace(args.layer, perm, opts=opts)
        if config.has_opt:
            events = list(events)
        stats = simulate(events, config, window=args.window)
    series = stats.ipc_series or []
    with open(args.out, "w", newline="") as fh:
        _emit_rows(series, ("instr", "ipc"), "csv", fh)
    if args.plot_script:
        analysis.write_plot_script("ipc", args.out, args.out + ".plot.py")
    mean_ipc = (stats.nonmem_ticks + stats.refs) / max(stats.cycles, 1)
    _emit_obj(
        {"points": len(series), "mean_ipc": f"{mean_ipc:.4f}", "out": args.out},
        args.format,
    )
    return 0


# -------------------------------------------------------------- the parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopnest",
        description="Exhaustive design-space exploration for convolution loop orderings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, layer=True, perm=True, fmt=True):
        if layer:
            p.add_argument(
                "--layer",
                type=_parse_layer,
                required=True,
                metavar="O,I,W,H,KW,KH",
                help="layer shape: out_ch,in_ch,img_w,img_h,ker_w,ker_h",
            )
        if perm:
            _add_perm_flags(p)
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("perms", help="index tables for all orderings")
    p.add_argument("--n", type=int, default=6)
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_perms)

    p = sub.add_parser("trace", help="generate and dump a memory trace")
    common(p, fmt=False)
    _add_trace_flags(p)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="run one ordering through the cache model")
    common(p)
    _add_trace_flags(p)
    p.add_argument("--config", default="base", help="base|small|mid|big, L1KB:L2KB, or @file.json[:name]")
    p.add_argument("--window", type=int, default=None, help="IPC sampling window")
    p.add_argument("--ipc-out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("emit-c", help="emit a C program for one ordering")
    common(p, fmt=False)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dense", action="store_true")
    p.add_argument("--validation", action="store_true", help="seeded fill + checksum print")
    p.add_argument("--out", default=".", help="directory, file path, or - for stdout")
    p.set_defaults(func=cmd_emit_c)

    p = sub.add_parser("sweep", help="simulate a whole design space")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=_PRESETS)
    src.add_argument("--layers-file", help="text file of `name: o,i,w,h,kw,kh` lines")
    p.add_argument("--perms", default="all", help="all | sample:K | comma lex indices")
    p.add_argument("--configs", default="base", help="comma list: presets, L1KB:L2KB, @file.json[:name]")
    p.add_argument("--threads", default=None, help="comma list of thread counts")
    p.add_argument("--limit", default=None, help="event cap per point, or 'none'")
    p.add_argument("--body-ticks", type=int, default=4)
    p.add_argument("--dense", action="store_true")
    p.add_argument("--sparsity", default=None, metavar="WD[,AD]")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tile-sweep", help="trade compute tiles against L2 capacity")
    common(p, fmt=True)
    p.add_argument("--body-ticks", type=int, default=4)
    p.add_argument("--dense", action="store_true")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--total-tiles", type=int, default=16)
    p.add_argument("--bank-kb", type=int, default=64)
    p.add_argument("--l1-kb", type=int, default=64)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tile_sweep)

    p = sub.add_parser("validate", help="exhaustive ordering-vs-oracle equivalence check")
    p.add_argument("--max-extent", type=int, default=3)
    p.add_argument("--layers", type=int, default=3, help="random layers per ordering")
    common(p, layer=False, perm=False, fmt=False)
    p.set_defaults(func=cmd_validate)

    pa = sub.add_parser("analyze", help="offline analyses over sweep results")
    asub = pa.add_subparsers(dest="analysis", required=True)

    p = asub.add_parser("rank", help="global ranking by mean speedup")
    p.add_argument("--results", required=True)
    p.add_argument("--metric", choices=analysis.METRICS, default="cycles")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", default=None, help="write the full ranking CSV here")
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_analyze_rank)

    p = asub.add_parser("pairs", help="best-of-k combinations")
    p.add_argument("--results", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--metric", choices=analysis.METRICS, default="cycles")
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", default=None)
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_analyze_pairs)

    p = asub.add_parser("sample-size", help="random-sampling sufficiency")
    p.add_argument("--results", default=None)
    p.add_argument("--g", default=None, help="good fraction, e.g. 80/720 or 0.111")
    p.add_argument("--good", type=float, default=0.9, help="speedup threshold")
    p.add_argument("--confidence", type=float, default=0.683)
    p.add_argument("--metric", choices=analysis.METRICS, default="cycles")
    p.add_argument("--mc", action="store_true", help="cross-check by Monte-Carlo")
    p.add_argument("--trials", type=int, default=100_000)
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_analyze_sample_size)

    p = asub.add_parser("stability", help="parallel-coordinates export across an axis")
    p.add_argument("--results", required=True)
    p.add_argument("--axis", choices=("config", "threads"), default="config")
    p.add_argument("--metric", choices=analysis.METRICS, default="cycles")
    p.add_argument("--plot-script", action="store_true")
    p.add_argument("--out", required=True)
    common(p, layer=False, perm=False)
    p.set_defaults(func=cmd_analyze_stability)

    p = asub.add_parser("reuse", help="first-touch reuse map of one ordering's trace")
    common(p, fmt=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--body-ticks", type=int, default=4)
    p.add_argument("--dense", action="store_true")
    p.add_argument("--limit", type=int, default=100_000)
    p.add_argument("--offset-bits", type=int, default=5)
    p.add_argument("--window", type=int, default=1_000_000)
    p.add_argument("--plot-script", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_reuse)

    p = asub.add_parser("ipc", help="windowed IPC series for one run")
    common(p)
    _add_trace_flags(p)
    p.add_argument("--config", default="base")
    p.add_argument("--window", type=int, default=10_000)
    p.add_argument("--plot-script", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_ipc)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _human(f"error: {exc}")
        return 1
    except (ValueError, OSError, analysis.CoverageError) as exc:
        _human(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
