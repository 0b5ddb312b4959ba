"""Offline analyses over persisted sweep results.

Everything here is read-only over the CSV rows `explorer.run_sweep`
writes.  The central object is the speedup table: per simulation case
(layer, config, threads) each ordering's metric is normalized against the
best ordering of that case, giving values in (0, 1] where 1.0 marks the
case's optimum.  Rankings, pair combinations, sampling-size estimates and
the stability export are all derived from that table; the reuse map works
on raw address streams instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .permindex import perm_of
from .conv import perm_str

METRICS = ("cycles", "l2_misses", "l1_misses")


class CoverageError(ValueError):
    """Result rows do not cover the same orderings for every case."""


@dataclass(frozen=True)
class SpeedupTable:
    """Per-(ordering, case) normalized performance.

    matrix[i, j] = best metric of case j / metric of ordering i on case j.
    """

    perm_lex: tuple[int, ...]
    cases: tuple[tuple[str, str, int], ...]  # (layer, config, threads)
    matrix: np.ndarray
    metric: str

    @property
    def mean(self) -> np.ndarray:
        return self.matrix.mean(axis=1)

    @property
    def min(self) -> np.ndarray:
        return self.matrix.min(axis=1)

    def perm_ham(self, i: int) -> int:
        from .permindex import index_of

        return index_of(perm_of(self.perm_lex[i], "lex"), "hamiltonian")


def _case_key(row: dict) -> tuple[str, str, int]:
    return (row["layer"], row["config"], int(row["threads"]))


def speedup_table(rows: Iterable[dict], metric: str = "cycles") -> SpeedupTable:
    """Build the normalized table, insisting on rectangular coverage."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    by_case: dict[tuple, dict[int, int]] = {}
    for row in rows:
        by_case.setdefault(_case_key(row), {})[int(row["perm_lex"])] = int(row[metric])
    if not by_case:
        raise CoverageError("no result rows")
    cases = tuple(sorted(by_case))
    perm_sets = {case: frozenset(v) for case, v in by_case.items()}
    reference = perm_sets[cases[0]]
    for case in cases[1:]:
        if perm_sets[case] != reference:
            missing = sorted(reference ^ perm_sets[case])[:8]
            raise CoverageError(
                f"case {case} covers different orderings than {cases[0]} "
                f"(first differences: {missing})"
            )
    perm_lex = tuple(sorted(reference))
    values = np.array(
        [[by_case[case][p] for case in cases] for p in perm_lex], dtype=np.float64
    )
    best = values.min(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        matrix = best[None, :] / values
    # a zero metric can only happen when the best is zero too; that row is
    # exactly optimal, so 0/0 reads as 1
    matrix[np.isnan(matrix)] = 1.0
    return SpeedupTable(perm_lex=perm_lex, cases=cases, matrix=matrix, metric=metric)


def rank_permutations(
    rows: Iterable[dict] | SpeedupTable, metric: str = "cycles"
) -> tuple[SpeedupTable, list[dict]]:
    """Rank orderings by mean speedup over all cases.

    Ties break by min speedup (higher first), then by lex index.
    """
    table = rows if isinstance(rows, SpeedupTable) else speedup_table(rows, metric)
    mean, mn = table.mean, table.min
    order = sorted(
        range(len(table.perm_lex)), key=lambda i: (-mean[i], -mn[i], table.perm_lex[i])
    )
    ranked = []
    for rank, i in enumerate(order, 1):
        lex = table.perm_lex[i]
        ranked.append(
            {
                "rank": rank,
                "perm_lex": lex,
                "perm_ham": table.perm_ham(i),
                "order": perm_str(perm_of(lex, "lex")),
                "mean_speedup": float(mean[i]),
                "min_speedup": float(mn[i]),
            }
        )
    return table, ranked


def best_of_k(
    rows: Iterable[dict] | SpeedupTable,
    k: int,
    metric: str = "cycles",
    limit: int = 100,
    beam_width: int = 64,
) -> list[dict]:
    """Rank k-sets of orderings, scoring each case by its best member.

    k <= 2 is exhaustive; larger k grows as C(720, k), so it runs a beam
    search seeded from the exhaustive pairs (approximate, width-bounded).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    table = rows if isinstance(rows, SpeedupTable) else speedup_table(rows, metric)
    S = table.matrix
    n = S.shape[0]

    def pack(idx_tuple) -> dict:
        vec = S[list(idx_tuple)].max(axis=0)
        return {
            "perms_lex": tuple(table.perm_lex[i] for i in idx_tuple),
            "orders": ";".join(perm_str(perm_of(table.perm_lex[i], "lex")) for i in idx_tuple),
            "mean_speedup": float(vec.mean()),
            "min_speedup": float(vec.min()),
        }

    if k == 1:
        mean = S.mean(axis=1)
        mn = S.min(axis=1)
        order = sorted(range(n), key=lambda i: (-mean[i], -mn[i], table.perm_lex[i]))
        return [pack((i,)) for i in order[:limit]]

    if k == 2:
        # exhaustive over all pairs, one vectorized sweep per left member
        best: list[tuple[float, float, tuple[int, int]]] = []
        for i in range(n - 1):
            pair_mat = np.maximum(S[i][None, :], S[i + 1 :])
            means = pair_mat.mean(axis=1)
            mins = pair_mat.min(axis=1)
            for off in np.argsort(-means)[: limit]:
                j = i + 1 + int(off)
                best.append((float(means[off]), float(mins[off]), (i, j)))
        best.sort(key=lambda t: (-t[0], -t[1], t[2]))
        return [pack(idx) for _, _, idx in best[:limit]]

    # beam search: extend the best (k-1)-sets by every unused ordering
    prev = best_of_k(table, 2, metric=metric, limit=beam_width, beam_width=beam_width)
    lex_to_row = {lex: i for i, lex in enumerate(table.perm_lex)}
    frontier = {tuple(sorted(lex_to_row[p] for p in c["perms_lex"])) for c in prev}
    for _ in range(k - 2):
        scored: dict[tuple, float] = {}
        for combo in frontier:
            base = S[list(combo)].max(axis=0)
            means = np.maximum(base[None, :], S).mean(axis=1)
            for j in np.argsort(-means)[: beam_width]:
                j = int(j)
                if j in combo:
                    continue
                cand = tuple(sorted(combo + (j,)))
                scored[cand] = float(means[j])
        frontier = set(sorted(scored, key=lambda c: -scored[c])[:beam_width])
    out = [pack(c) for c in frontier]
    out.sort(key=lambda d: (-d["mean_speedup"], -d["min_speedup"], d["perms_lex"]))
    return out[:limit]


def sample_size(g: float, confidence: float) -> int | None:
    """Smallest m with 1 - (1-g)^m >= confidence; None when g == 0.

    g is the fraction of orderings counting as good; each of m independent
    uniform draws hits one with probability g.
    """
    if not 0.0 <= g <= 1.0:
        raise ValueError(f"g must be in [0, 1], got {g}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    if g == 0.0:
        return None
    if g == 1.0:
        return 1
    m = max(1, math.ceil(math.log1p(-confidence) / math.log1p(-g)))
    # float guard: walk to the exact boundary
    while 1.0 - (1.0 - g) ** m < confidence:
        m += 1
    while m > 1 and 1.0 - (1.0 - g) ** (m - 1) >= confidence:
        m -= 1
    return m


def random_sampling_requirement(
    rows: Iterable[dict] | SpeedupTable,
    good_threshold: float = 0.9,
    confidence: float = 0.683,
    metric: str = "cycles",
) -> dict:
    """How many random orderings to draw before one is probably good.

    "Good" means speedup >= good_threshold; g is taken from the case with
    the fewest good orderings, so the answer covers every case at once.
    """
    if not 0.0 < good_threshold <= 1.0:
        raise ValueError("good_threshold must be in (0, 1]")
    table = rows if isinstance(rows, SpeedupTable) else speedup_table(rows, metric)
    good_per_case = (table.matrix >= good_threshold).sum(axis=0)
    worst_idx = int(good_per_case.argmin())
    g = float(good_per_case[worst_idx]) / len(table.perm_lex)
    return {
        "good_threshold": good_threshold,
        "confidence": confidence,
        "worst_case": table.cases[worst_idx],
        "good_count": int(good_per_case[worst_idx]),
        "n_perms": len(table.perm_lex),
        "g": g,
        "m": sample_size(g, confidence),
    }


def mc_success_rate(
    g: float, m: int, trials: int = 100_000, seed: int = 1
) -> tuple[float, float]:
    """Monte-Carlo estimate of 1-(1-g)^m plus its standard error.

    Simulates the same process the closed form models: m independent
    draws, each good with probability g.
    """
    rng = np.random.default_rng(seed)
    hits = (rng.random((trials, m)) < g).any(axis=1)
    rate = float(hits.mean())
    se = math.sqrt(max(rate * (1.0 - rate), 1e-12) / trials)
    return rate, se


def stability_groups(
    rows: Iterable[dict], axis: str = "config", metric: str = "cycles"
) -> dict:
    """Per-ordering mean speedup split along one axis (config or threads).

    Returns group labels, a [n_perms x n_groups] matrix of mean speedups,
    hamiltonian indices, a color key, and Spearman rank correlations
    between adjacent groups.
    """
    if axis not in ("config", "threads"):
        raise ValueError(f"axis must be 'config' or 'threads', got {axis!r}")
    rows = list(rows)
    groups = sorted({row[axis] for row in rows}, key=lambda v: (str(v)))
    if len(groups) < 2:
        raise CoverageError(f"need at least two {axis} groups, found {groups}")
    tables = []
    for gval in groups:
        table = speedup_table([r for r in rows if r[axis] == gval], metric)
        tables.append(table)
    ref = tables[0]
    for gval, table in zip(groups[1:], tables[1:]):
        if table.perm_lex != ref.perm_lex:
            raise CoverageError(f"group {gval!r} covers different orderings")
        stripped = tuple((c[0], c[2]) for c in table.cases) if axis == "config" else tuple(
            (c[0], c[1]) for c in table.cases
        )
        ref_stripped = tuple((c[0], c[2]) for c in ref.cases) if axis == "config" else tuple(
            (c[0], c[1]) for c in ref.cases
        )
        if stripped != ref_stripped:
            raise CoverageError(f"group {gval!r} covers different cases than {groups[0]!r}")
    means = np.stack([t.mean for t in tables], axis=1)
    ham = np.array([ref.perm_ham(i) for i in range(len(ref.perm_lex))])
    n = len(ref.perm_lex)
    spearman = []
    for a in range(len(groups) - 1):
        rho = spearmanr(means[:, a], means[:, a + 1]).statistic
        spearman.append((str(groups[a]), str(groups[a + 1]), float(rho)))
    return {
        "axis": axis,
        "metric": metric,
        "groups": [str(g) for g in groups],
        "perm_lex": ref.perm_lex,
        "perm_ham": ham,
        "color": ham / max(n - 1, 1),
        "means": means,
        "spearman": spearman,
    }


@dataclass(frozen=True)
class ReuseMap:
    """First-touch-renamed view of an address stream."""

    word_ranks: np.ndarray
    block_ranks: np.ndarray
    offset_bits: int
    window: int
    window_distinct_blocks: tuple[int, ...]

    @property
    def distinct_words(self) -> int:
        return int(self.word_ranks.max()) + 1 if len(self.word_ranks) else 0

    @property
    def distinct_blocks(self) -> int:
        return int(self.block_ranks.max()) + 1 if len(self.block_ranks) else 0

    @property
    def peak_working_set(self) -> int:
        return max(self.window_distinct_blocks, default=0)


def first_touch_ranks(values: np.ndarray) -> np.ndarray:
    """Rename values by order of first appearance: A,B,A,C -> 0,1,0,2."""
    values = np.asarray(values)
    if values.size == 0:
        return np.zeros(0, dtype=np.int64)
    uniq, first_idx, inverse = np.unique(values, return_index=True, return_inverse=True)
    order = np.argsort(first_idx, kind="stable")
    ranks = np.empty(len(uniq), dtype=np.int64)
    ranks[order] = np.arange(len(uniq), dtype=np.int64)
    return ranks[inverse]


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def export_signatures(rows: Iterable[dict], path: str) -> str:
    """Raw per-ordering cost curves, one row per sweep point.

    Plot cycles (or l2_misses) against perm_ham per (layer, config,
    threads) to see the characteristic sawtooth signature.
    """
    rows = sorted(
        rows, key=lambda r: (r["layer"], r["config"], int(r["threads"]), int(r["perm_ham"]))
    )
    header = ("layer", "config", "threads", "perm_ham", "perm_lex", "cycles", "l2_misses")
    return _write_csv(path, header, ([r[c] for c in header] for r in rows))


def export_ranking(rows: Iterable[dict], path: str, metric: str = "cycles") -> str:
    _, ranked = rank_permutations(rows, metric)
    header = ("rank", "perm_lex", "perm_ham", "order", "mean_speedup", "min_speedup")
    return _write_csv(path, header, ([r[c] for c in header] for r in ranked))


def export_stability(
    rows: Iterable[dict], path: str, axis: str = "config", metric: str = "cycles"
) -> tuple[str, list[tuple[str, str, float]]]:
    """Parallel-coordinates data: one row per ordering, one column per group."""
    data = stability_groups(rows, axis, metric)
    header = ["perm_ham", "perm_lex", "color"] + [f"mean_{g}" for g in data["groups"]]
    order = np.argsort(data["perm_ham"])
    body = []
    for i in order:
        body.append(
            [int(data["perm_ham"][i]), data["perm_lex"][i], f"{data['color'][i]:.6f}"]
            + [f"{v:.6f}" for v in data["means"][i]]
        )
    return _write_csv(path, header, body), data["spearman"]


def export_pairs(
    rows: Iterable[dict], path: str, k: int = 2, metric: str = "cycles", limit: int = 100
) -> str:
    combos = best_of_k(rows, k, metric=metric, limit=limit)
    header = ("rank", "perms_lex", "orders", "mean_speedup", "min_speedup")
    body = (
        (
            rank,
            ";".join(str(p) for p in c["perms_lex"]),
            c["orders"],
            f"{c['mean_speedup']:.6f}",
            f"{c['min_speedup']:.6f}",
        )
        for rank, c in enumerate(combos, 1)
    )
    return _write_csv(path, header, body)


def export_sorted_curves(rows: Iterable[dict], path: str, metric: str = "cycles") -> str:
    """Per-case speedup distributions, each sorted best-first.

    `position` is the per-case rank, so plotting speedup against position
    overlays every case's curve regardless of which ordering is where.
    """
    table = rows if isinstance(rows, SpeedupTable) else speedup_table(rows, metric)
    header = ("layer", "config", "threads", "position", "speedup")
    body = []
    for j, case in enumerate(table.cases):
        col = np.sort(table.matrix[:, j])[::-1]
        for pos, v in enumerate(col):
            body.append((case[0], case[1], case[2], pos, f"{v:.6f}"))
    return _write_csv(path, header, body)


def export_reuse(map_: ReuseMap, path: str) -> str:
    header = ("seq", "word_rank", "block_rank")
    body = zip(range(len(map_.word_ranks)), map_.word_ranks, map_.block_ranks)
    return _write_csv(path, header, body)


_PLOT_TEMPLATES = {
    "signatures": """\
for key, grp in df.groupby(["layer", "config", "threads"]):
    grp = grp.sort_values("perm_ham")
    ax.plot(grp["perm_ham"], grp["cycles"], lw=0.7, label="/".join(map(str, key)))
ax.set_xlabel("permutation (hamiltonian index)")
ax.set_ylabel("cycles")
ax.legend(fontsize=6)
""",
    "ranking": """\
ax.plot(df["rank"], df["mean_speedup"], label="mean")
ax.plot(df["rank"], df["min_speedup"], label="min", alpha=0.6)
ax.set_xlabel("rank")
ax.set_ylabel("speedup vs per-case best")
ax.legend()
""",
    "stability": """\
groups = [c for c in df.columns if c.startswith("mean_")]
xs = range(len(groups))
for _, row in df.iterrows():
    ax.plot(xs, [row[g] for g in groups], color=plt.cm.viridis(row["color"]), lw=0.3)
ax.set_xticks(list(xs), [g[len("mean_"):] for g in groups])
ax.set_ylabel("mean speedup")
""",
    "pairs": """\
ax.plot(df["rank"], df["mean_speedup"], label="mean")
ax.plot(df["rank"], df["min_speedup"], label="min", alpha=0.6)
ax.set_xlabel("combination rank")
ax.set_ylabel("speedup vs per-case best")
ax.legend()
""",
    "curves": """\
for key, grp in df.groupby(["layer", "config", "threads"]):
    ax.plot(grp["position"], grp["speedup"], lw=0.7)
ax.set_xlabel("per-case rank")
ax.set_ylabel("speedup vs per-case best")
""",
    "reuse": """\
ax.scatter(df["seq"], df["block_rank"], s=0.2, marker=".")
ax.set_xlabel("access sequence number")
ax.set_ylabel("block (first-touch rank)")
""",
    "ipc": """\
ax.plot(df["instr"], df["ipc"], lw=0.7)
ax.set_xlabel("instructions")
ax.set_ylabel("IPC")
""",
}


def write_plot_script(kind: str, csv_path: str, out_path: str) -> str:
    """Emit a minimal matplotlib recipe next to an exported CSV."""
    if kind not in _PLOT_TEMPLATES:
        raise ValueError(f"kind must be one of {sorted(_PLOT_TEMPLATES)}, got {kind!r}")
    body = _PLOT_TEMPLATES[kind]
    script = (
        "#!/usr/bin/env python3\n"
        "import matplotlib\n"
        'matplotlib.use("Agg")\n'
        "import matplotlib.pyplot as plt\n"
        "import pandas as pd\n\n"
        f"df = pd.read_csv({csv_path!r})\n"
        "fig, ax = plt.subplots(figsize=(8, 5), dpi=150)\n"
        f"{body}"
        f"fig.savefig({csv_path!r} + '.png', bbox_inches='tight')\n"
        f"print({csv_path!r} + '.png')\n"
    )
    with open(out_path, "w") as fh:
        fh.write(script)
    return out_path


def reuse_map(
    addresses: np.ndarray, offset_bits: int = 5, window: int = 1_000_000
) -> ReuseMap:
    """Access-pattern scatter data plus a working-set estimate.

    `addresses` is the byte-address stream of the memory references, in
    order.  The working set is estimated as the count of distinct blocks
    per tumbling window of `window` accesses (the window size is a free
    parameter; there is no canonical definition to pin it to).
    """
    if offset_bits < 0:
        raise ValueError("offset_bits must be >= 0")
    if window < 1:
        raise ValueError("window must be >= 1")
    addresses = np.asarray(addresses, dtype=np.int64)
    blocks = addresses >> offset_bits
    distinct = tuple(
        int(len(np.unique(blocks[i : i + window])))
        for i in range(0, len(blocks), window)
    )
    return ReuseMap(
        word_ranks=first_touch_ranks(addresses),
        block_ranks=first_touch_ranks(blocks),
        offset_bits=offset_bits,
        window=window,
        window_distinct_blocks=distinct,
    )
