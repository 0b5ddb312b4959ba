"""Trace-driven simulation of a multi-level cache hierarchy.

Every memory reference is looked up level by level; a miss allocates the
block at that level and falls through to the next (inclusive hierarchy,
write-allocate, no writeback traffic is modeled).  Reads and writes cost
the same and both refresh recency.  Non-memory ticks bypass the caches.

Cost model: each reference is charged only the latency of the level it
hits (main memory counting as the level below the last cache), and each
tick costs one cycle:

    cycles = nonmem_ticks + sum(level_hits[l] * latency[l]) + memory_accesses * mem_latency

Per-thread cycle totals are kept as well; their max is the wall-clock
estimate for an interleaved multi-thread trace (equal to `cycles` for a
single-thread trace), and their sum is always exactly `cycles`.

Replacement policies: `lru`, `random` (seeded 64-bit xorshift-star, one
draw per full-set eviction) and `opt` (furthest next use, ties to the
lowest way index).  `opt` needs to look ahead, so it requires a buffered
(list or tuple) trace.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tracegen import Event, MemRef, RefKind

INF = 1 << 62
_U64 = (1 << 64) - 1
_XS_MULT = 0x2545F4914F6CDD1D
_SEED_FALLBACK = 0x9E3779B97F4A7C15


class ConfigError(ValueError):
    pass


def xorshift64star(state: int) -> int:
    """One step of the xorshift64* generator (state must be non-zero)."""
    state &= _U64
    state ^= state >> 12
    state ^= (state << 25) & _U64
    state ^= state >> 27
    return (state * _XS_MULT) & _U64


def seed_state(seed: int) -> int:
    s = seed & _U64
    return s if s else _SEED_FALLBACK


@dataclass(frozen=True)
class CacheLevelConfig:
    size_bytes: int
    block_bytes: int
    assoc: int
    latency: int
    policy: str = "lru"
    seed: int = 1

    def __post_init__(self):
        if self.block_bytes < 1 or self.block_bytes & (self.block_bytes - 1):
            raise ConfigError(f"block_bytes must be a power of two, got {self.block_bytes}")
        if self.assoc < 1:
            raise ConfigError("assoc must be >= 1")
        if self.size_bytes % (self.block_bytes * self.assoc):
            raise ConfigError(
                f"size {self.size_bytes} not divisible by block*assoc "
                f"({self.block_bytes}*{self.assoc})"
            )
        if self.policy not in ("lru", "random", "opt"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.latency < 0:
            raise ConfigError("latency must be >= 0")

    @property
    def n_sets(self) -> int:
        return self.size_bytes // (self.block_bytes * self.assoc)


@dataclass(frozen=True)
class CacheConfig:
    levels: tuple[CacheLevelConfig, ...]
    mem_latency: int = 30

    def __post_init__(self):
        if not self.levels:
            raise ConfigError("need at least one cache level")
        if self.mem_latency < 0:
            raise ConfigError("mem_latency must be >= 0")

    @property
    def latencies(self) -> tuple[int, ...]:
        """Per-hit-level cost, main memory last."""
        return tuple(l.latency for l in self.levels) + (self.mem_latency,)

    @property
    def has_opt(self) -> bool:
        return any(l.policy == "opt" for l in self.levels)


def two_level(l1_kb: int, l2_kb: int, seed: int = 1) -> CacheConfig:
    """The modeled memory system: direct-mapped L1, 8-way random L2, 30-cycle memory."""
    return CacheConfig(
        levels=(
            CacheLevelConfig(l1_kb * 1024, 32, 1, 3, "lru", seed),
            CacheLevelConfig(l2_kb * 1024, 32, 8, 10, "random", seed),
        ),
        mem_latency=30,
    )


def preset_config(name: str, seed: int = 1) -> CacheConfig:
    sizes = {"base": (64, 512), "small": (16, 128), "mid": (32, 512), "big": (64, 960)}
    if name not in sizes:
        raise ConfigError(f"unknown config preset {name!r}; expected one of {sorted(sizes)}")
    return two_level(*sizes[name], seed=seed)


def config_to_dict(config: CacheConfig) -> dict:
    return {
        "mem_latency": config.mem_latency,
        "levels": [
            {
                "size_bytes": l.size_bytes,
                "block_bytes": l.block_bytes,
                "assoc": l.assoc,
                "latency": l.latency,
                "policy": l.policy,
                "seed": l.seed,
            }
            for l in config.levels
        ],
    }


def config_from_dict(data: dict) -> CacheConfig:
    levels = tuple(CacheLevelConfig(**lvl) for lvl in data["levels"])
    return CacheConfig(levels=levels, mem_latency=data.get("mem_latency", 30))


@dataclass
class CacheStats:
    level_hits: tuple[int, ...]
    level_misses: tuple[int, ...]
    memory_accesses: int
    reads: int
    writes: int
    nonmem_ticks: int
    cycles: int
    thread_cycles: tuple[int, ...]
    ipc_series: list[tuple[int, float]] | None = None
    hit_levels: np.ndarray | None = None

    @property
    def refs(self) -> int:
        return self.reads + self.writes

    @property
    def wall_cycles(self) -> int:
        """Cycle estimate for the slowest thread; == cycles for one thread."""
        return max(self.thread_cycles) if self.thread_cycles else 0

    def check_identity(self, config: CacheConfig) -> None:
        """Assert the additive cycle identity; raises on any bookkeeping drift."""
        expect = self.nonmem_ticks
        for hits, lat in zip(self.level_hits, config.latencies):
            expect += hits * lat
        expect += self.memory_accesses * config.mem_latency
        if expect != self.cycles:
            raise AssertionError(f"cycle identity broken: {self.cycles} != {expect}")
        if sum(self.thread_cycles) != self.cycles:
            raise AssertionError("per-thread cycles do not sum to the total")

    def to_row(self) -> dict[str, int]:
        row: dict[str, int] = {}
        for idx, (h, m) in enumerate(zip(self.level_hits, self.level_misses)):
            row[f"l{idx + 1}_hits"] = h
            row[f"l{idx + 1}_misses"] = m
        row.update(
            memory_accesses=self.memory_accesses,
            reads=self.reads,
            writes=self.writes,
            refs=self.refs,
            ticks=self.nonmem_ticks,
            cycles=self.cycles,
            wall_cycles=self.wall_cycles,
        )
        return row


class _Level:
    """One set-associative level with fixed way slots."""

    __slots__ = ("cfg", "n_sets", "tags", "stamps", "counter", "rng")

    def __init__(self, cfg: CacheLevelConfig):
        self.cfg = cfg
        self.n_sets = cfg.n_sets
        self.tags = [[-1] * cfg.assoc for _ in range(self.n_sets)]
        self.stamps = [[0] * cfg.assoc for _ in range(self.n_sets)]
        self.counter = 0
        self.rng = seed_state(cfg.seed)

    def access(self, addr: int) -> bool:
        block = addr // self.cfg.block_bytes
        row = self.tags[block % self.n_sets]
        stamps = self.stamps[block % self.n_sets]
        assoc = self.cfg.assoc
        for way in range(assoc):
            if row[way] == block:
                self.counter += 1
                stamps[way] = self.counter
                return True
        way = -1
        for cand in range(assoc):
            if row[cand] == -1:
                way = cand
                break
        if way < 0:
            if self.cfg.policy == "random":
                self.rng = xorshift64star(self.rng)
                way = self.rng % assoc
            else:  # lru: oldest stamp, lowest way on ties
                way = min(range(assoc), key=lambda w: (stamps[w], w))
        row[way] = block
        self.counter += 1
        stamps[way] = self.counter
        return False


def _opt_level_hits(cfg: CacheLevelConfig, addrs: Sequence[int]) -> list[bool]:
    """Hit flags for one level under furthest-next-use replacement."""
    n = len(addrs)
    blocks = [a // cfg.block_bytes for a in addrs]
    nxt = [INF] * n
    last: dict[int, int] = {}
    for j in range(n - 1, -1, -1):
        b = blocks[j]
        nxt[j] = last.get(b, INF)
        last[b] = j
    n_sets = cfg.n_sets
    assoc = cfg.assoc
    tags = [[-1] * assoc for _ in range(n_sets)]
    uses = [[INF] * assoc for _ in range(n_sets)]
    hits = [False] * n
    for j, b in enumerate(blocks):
        row = tags[b % n_sets]
        use = uses[b % n_sets]
        hit_way = -1
        for way in range(assoc):
            if row[way] == b:
                hit_way = way
                break
        if hit_way >= 0:
            hits[j] = True
            use[hit_way] = nxt[j]
            continue
        way = -1
        for cand in range(assoc):
            if row[cand] == -1:
                way = cand
                break
        if way < 0:
            way = 0
            for cand in range(1, assoc):
                if use[cand] > use[way]:
                    way = cand
        row[way] = b
        use[way] = nxt[j]
    return hits


def _buffered_hit_levels(addrs: list[int], config: CacheConfig) -> np.ndarray:
    """Hit level per reference, filtering the stream level by level.

    Each level sees exactly the misses of the level above, which is what a
    streaming cascade produces too; doing it per level lets OPT see its own
    whole future stream.
    """
    n_levels = len(config.levels)
    hit_level = np.full(len(addrs), n_levels, dtype=np.uint8)
    stream = list(range(len(addrs)))
    for lvl_idx, cfg in enumerate(config.levels):
        if not stream:
            break
        lvl_addrs = [addrs[pos] for pos in stream]
        if cfg.policy == "opt":
            flags = _opt_level_hits(cfg, lvl_addrs)
        else:
            level = _Level(cfg)
            flags = [level.access(a) for a in lvl_addrs]
        next_stream = []
        for pos, hit in zip(stream, flags):
            if hit:
                hit_level[pos] = lvl_idx
            else:
                next_stream.append(pos)
        stream = next_stream
    return hit_level


class _WindowAcc:
    __slots__ = ("window", "instr", "win_instr", "win_cycles", "series")

    def __init__(self, window: int):
        if window < 1:
            raise ConfigError("window must be >= 1")
        self.window = window
        self.instr = 0
        self.win_instr = 0
        self.win_cycles = 0
        self.series: list[tuple[int, float]] = []

    def add(self, cost: int) -> None:
        self.instr += 1
        self.win_instr += 1
        self.win_cycles += cost
        if self.win_instr == self.window:
            self.series.append((self.instr, self.window / self.win_cycles))
            self.win_instr = 0
            self.win_cycles = 0


def simulate(
    events: Iterable[Event],
    config: CacheConfig,
    *,
    window: int | None = None,
    collect_hit_levels: bool = False,
) -> CacheStats:
    """Run a trace through the hierarchy and return the stats.

    `events` may be any iterable unless some level uses OPT, which needs a
    buffered list/tuple.  `window` adds a recent-IPC series sampled every
    `window` instructions (each event is one instruction).
    """
    latencies = config.latencies
    n_levels = len(config.levels)
    level_hits = [0] * n_levels
    level_misses = [0] * n_levels
    reads = writes = ticks = 0
    thread_cycles: dict[int, int] = {}
    win = _WindowAcc(window) if window is not None else None
    collected: list[int] | None = [] if collect_hit_levels else None

    if config.has_opt:
        if not isinstance(events, (list, tuple)):
            raise ConfigError("opt replacement needs a buffered trace (list or tuple)")
        addrs = [ev.address for ev in events if isinstance(ev, MemRef)]
        hit_of_ref = _buffered_hit_levels(addrs, config)
        ref_idx = 0

        def cost_of(ref: MemRef) -> int:
            nonlocal ref_idx
            lvl = int(hit_of_ref[ref_idx])
            ref_idx += 1
            if lvl < n_levels:
                level_hits[lvl] += 1
            for upper in range(min(lvl, n_levels)):
                level_misses[upper] += 1
            if collected is not None:
                collected.append(lvl)
            return latencies[lvl]

    else:
        live_levels = [_Level(cfg) for cfg in config.levels]

        def cost_of(ref: MemRef) -> int:
            lvl = n_levels
            for idx, level in enumerate(live_levels):
                if level.access(ref.address):
                    lvl = idx
                    break
            if lvl < n_levels:
                level_hits[lvl] += 1
            for upper in range(min(lvl, n_levels)):
                level_misses[upper] += 1
            if collected is not None:
                collected.append(lvl)
            return latencies[lvl]

    for ev in events:
        if isinstance(ev, MemRef):
            if ev.kind == RefKind.READ:
                reads += 1
            else:
                writes += 1
            cost = cost_of(ev)
            thread_cycles[ev.thread] = thread_cycles.get(ev.thread, 0) + cost
        else:
            ticks += 1
            cost = 1
            thread_cycles[ev.thread] = thread_cycles.get(ev.thread, 0) + 1
        if win is not None:
            win.add(cost)

    n_threads = max(thread_cycles) + 1 if thread_cycles else 1
    per_thread = tuple(thread_cycles.get(t, 0) for t in range(n_threads))
    cycles = sum(per_thread)
    stats = CacheStats(
        level_hits=tuple(level_hits),
        level_misses=tuple(level_misses),
        memory_accesses=level_misses[-1] if n_levels else reads + writes,
        reads=reads,
        writes=writes,
        nonmem_ticks=ticks,
        cycles=cycles,
        thread_cycles=per_thread,
        ipc_series=win.series if win is not None else None,
        hit_levels=np.array(collected, dtype=np.uint8) if collected is not None else None,
    )
    stats.check_identity(config)
    return stats


def simulate_opt(events: Sequence[Event], config: CacheConfig, **kw) -> CacheStats:
    """simulate() for configurations containing OPT levels (buffered trace)."""
    if not config.has_opt:
        raise ConfigError("simulate_opt expects a config with at least one opt level")
    return simulate(list(events), config, **kw)


def windowed_ipc(
    events: Iterable[Event], config: CacheConfig, window: int
) -> list[tuple[int, float]]:
    """Recent IPC sampled every `window` instructions (full windows only)."""
    return simulate(events, config, window=window).ipc_series
