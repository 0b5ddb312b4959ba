"""Compiled fused trace generation + cache simulation for large runs.

Semantically identical to `tracegen.generate_trace` piped into
`cachesim.simulate` (the parity tests hold the two paths together), but
the trace is produced and consumed in bounded chunks of flat arrays, so a
10^8-event run needs megabytes, not gigabytes.

Ticks are carried as a per-reference "preceding ticks" count instead of
individual events.  That preserves every statistic exactly (tick placement
never touches the caches and thread attribution is kept); the only visible
difference is that the recent-IPC series of a *multi-thread* trace can
split windows at slightly different points than the event-by-event
reference, because a thread's trailing ticks are accounted when its next
reference retires.  Single-thread IPC series match the reference exactly.

Supported configs: exactly two cache levels with `lru` or `random`
replacement (what every preset uses).  Anything else goes through the
reference path.
"""
from __future__ import annotations

from math import prod
from typing import Sequence

import numpy as np
from numba import njit

from .cachesim import CacheConfig, CacheStats, ConfigError, seed_state
from .conv import (
    ArrayLayout,
    LayerParams,
    LoopDim,
    WORD_BYTES,
    check_perm,
    innermost_dependent_depth,
    needs_atomic,
    word_strides,
)
from .tracegen import TraceOptions, chunk_ranges, zero_masks

_U12 = np.uint64(12)
_U25 = np.uint64(25)
_U27 = np.uint64(27)
_XSM = np.uint64(0x2545F4914F6CDD1D)

# meta slots for the generator state
_ACTIVE, _RR, _EVENTS, _LIMIT, _DONE, _READS, _WRITES = range(7)

_CHUNK = 1 << 19


def supports(config: CacheConfig) -> bool:
    return len(config.levels) == 2 and not config.has_opt


@njit(cache=True)
def _gen_chunk(
    v,
    in_a,
    w_a,
    out_a,
    remaining,
    local,
    pending,
    order,
    meta,
    extents,
    cin,
    cw,
    cout,
    body,
    k_ticks,
    atomic,
    partial,
    sparse,
    wz,
    az,
    in_base,
    w_base,
    addr,
    tid,
    pre,
    cap,
):  # pragma: no cover - jitted
    n = 0
    while meta[_ACTIVE] > 0 and meta[_DONE] == 0 and n + 4 <= cap:
        t = order[meta[_RR]]
        emitted = np.int64(0)

        masked = False
        if sparse == 1:
            widx = (w_a[t] - w_base) >> 2
            aidx = (in_a[t] - in_base) >> 2
            masked = wz[widx] == 1 or az[aidx] == 1

        if masked:
            pending[t] += 1
            emitted += 1
        else:
            addr[n] = in_a[t]
            tid[n] = t
            pre[n] = pending[t]
            pending[t] = 0
            n += 1
            addr[n] = w_a[t]
            tid[n] = t
            pre[n] = 0
            n += 1
            emitted += 2
            meta[_READS] += 2
            if partial == 0:
                addr[n] = out_a[t]
                tid[n] = t
                pre[n] = 0
                n += 1
                addr[n] = out_a[t]
                tid[n] = t
                pre[n] = atomic
                n += 1
                emitted += 2 + atomic
                meta[_READS] += 1
                meta[_WRITES] += 1
            pending[t] += k_ticks
            emitted += k_ticks

        if partial == 1 and (local[t] + 1) % body == 0:
            addr[n] = out_a[t]
            tid[n] = t
            pre[n] = pending[t]
            pending[t] = 0
            n += 1
            addr[n] = out_a[t]
            tid[n] = t
            pre[n] = atomic
            n += 1
            emitted += 2 + atomic
            meta[_READS] += 1
            meta[_WRITES] += 1

        local[t] += 1
        remaining[t] -= 1

        # odometer step with incremental address maintenance
        for depth in range(5, -1, -1):
            v[t, depth] += 1
            in_a[t] += cin[depth]
            w_a[t] += cw[depth]
            out_a[t] += cout[depth]
            if v[t, depth] < extents[depth] or depth == 0:
                break
            v[t, depth] = 0
            in_a[t] -= extents[depth] * cin[depth]
            w_a[t] -= extents[depth] * cw[depth]
            out_a[t] -= extents[depth] * cout[depth]

        meta[_EVENTS] += emitted
        if meta[_LIMIT] >= 0 and meta[_EVENTS] >= meta[_LIMIT]:
            meta[_DONE] = 1

        if remaining[t] == 0:
            # drop the thread from the rotation, keeping the order of the rest
            for j in range(meta[_RR], meta[_ACTIVE] - 1):
                order[j] = order[j + 1]
            meta[_ACTIVE] -= 1
        else:
            meta[_RR] += 1
        if meta[_RR] >= meta[_ACTIVE]:
            meta[_RR] = 0
    return n


@njit(inline="always")
def _level_access(tags, stamps, cstate, rng, lvl, block, s, assoc, policy):  # pragma: no cover
    base = s * assoc
    for way in range(assoc):
        if tags[base + way] == block:
            cstate[lvl] += 1
            stamps[base + way] = cstate[lvl]
            return True
    victim = -1
    for cand in range(assoc):
        if tags[base + cand] == -1:
            victim = cand
            break
    if victim < 0:
        if policy == 1:  # random
            st = rng[lvl]
            st = st ^ (st >> _U12)
            st = st ^ (st << _U25)
            st = st ^ (st >> _U27)
            st = st * _XSM
            rng[lvl] = st
            victim = np.int64(st % np.uint64(assoc))
        else:  # lru: oldest stamp wins, lowest way on ties
            victim = 0
            best = stamps[base]
            for cand in range(1, assoc):
                if stamps[base + cand] < best:
                    best = stamps[base + cand]
                    victim = cand
    tags[base + victim] = block
    cstate[lvl] += 1
    stamps[base + victim] = cstate[lvl]
    return False


@njit(inline="always")
def _win_push(win, pts_at, pts_ipc, pts_n, count, cost_each):  # pragma: no cover
    # account `count` instructions of identical cost against the window
    left = count
    while left > 0:
        room = win[0] - win[1]
        take = left if left < room else room
        win[1] += take
        win[2] += take * cost_each
        win[3] += take
        left -= take
        if win[1] == win[0]:
            pts_at[pts_n[0]] = win[3]
            pts_ipc[pts_n[0]] = win[0] / win[2]
            pts_n[0] += 1
            win[1] = 0
            win[2] = 0


@njit(cache=True)
def _sim_chunk(
    addr,
    tid,
    pre,
    n,
    tags1,
    st1,
    tags2,
    st2,
    cstate,
    rng,
    shift1,
    shift2,
    ns1,
    ns2,
    assoc1,
    assoc2,
    pol1,
    pol2,
    lat1,
    lat2,
    lat_mem,
    counters,
    thread_cycles,
    win,
    pts_at,
    pts_ipc,
    pts_n,
):  # pragma: no cover - jitted
    use_win = win[0] > 0
    # set index by mask when the set count is a power of two, else modulo
    mask1 = ns1 - 1 if ns1 & (ns1 - 1) == 0 else np.int64(-1)
    mask2 = ns2 - 1 if ns2 & (ns2 - 1) == 0 else np.int64(-1)
    # assoc-1 sets need no recency or victim choice: tag compare + overwrite
    dm1 = assoc1 == 1
    dm2 = assoc2 == 1
    for r in range(n):
        t = tid[r]
        p = pre[r]
        if p > 0:
            counters[3] += p
            thread_cycles[t] += p
            if use_win:
                _win_push(win, pts_at, pts_ipc, pts_n, p, 1)
        block = addr[r] >> shift1
        s1 = block & mask1 if mask1 >= 0 else block % ns1
        if dm1:
            hit1 = tags1[s1] == block
            if not hit1:
                tags1[s1] = block
        else:
            hit1 = _level_access(tags1, st1, cstate, rng, 0, block, s1, assoc1, pol1)
        if hit1:
            lat = lat1
            counters[0] += 1
        else:
            block2 = addr[r] >> shift2
            s2 = block2 & mask2 if mask2 >= 0 else block2 % ns2
            if dm2:
                hit2 = tags2[s2] == block2
                if not hit2:
                    tags2[s2] = block2
            else:
                hit2 = _level_access(tags2, st2, cstate, rng, 1, block2, s2, assoc2, pol2)
            if hit2:
                lat = lat2
                counters[1] += 1
            else:
                lat = lat_mem
                counters[2] += 1
        thread_cycles[t] += lat
        if use_win:
            _win_push(win, pts_at, pts_ipc, pts_n, 1, lat)


@njit(cache=True)
def _flush_ticks(count, t, counters, thread_cycles, win, pts_at, pts_ipc, pts_n):  # pragma: no cover
    counters[3] += count
    thread_cycles[t] += count
    if win[0] > 0:
        _win_push(win, pts_at, pts_ipc, pts_n, count, 1)


class _GenState:
    """Flat-array mirror of the reference generator's per-thread state."""

    def __init__(
        self,
        layer: LayerParams,
        perm: Sequence[LoopDim],
        layout: ArrayLayout,
        opts: TraceOptions,
    ):
        dims = check_perm(perm)
        extents = layer.extents(dims)
        strides = word_strides(layer)
        self.extents = np.array(extents, dtype=np.int64)
        self.cin = np.array([strides[d][0] * WORD_BYTES for d in dims], dtype=np.int64)
        self.cw = np.array([strides[d][1] * WORD_BYTES for d in dims], dtype=np.int64)
        self.cout = np.array([strides[d][2] * WORD_BYTES for d in dims], dtype=np.int64)

        dep = innermost_dependent_depth(dims)
        self.body = np.int64(prod(extents[dep + 1 :]))
        self.k_ticks = np.int64(opts.body_ticks)
        self.atomic = np.int64(1 if needs_atomic(dims, opts.threads) else 0)
        self.partial = np.int64(1 if opts.partial_sums else 0)

        w_zero, a_zero = zero_masks(layer, opts.sparsity)
        self.sparse = np.int64(0 if w_zero is None else 1)
        if w_zero is None:
            self.wz = np.zeros(1, dtype=np.uint8)
            self.az = np.zeros(1, dtype=np.uint8)
        else:
            self.wz = np.ascontiguousarray(w_zero.ravel().astype(np.uint8))
            self.az = np.ascontiguousarray(a_zero.ravel().astype(np.uint8))
        self.in_base = np.int64(layout.input_base)
        self.w_base = np.int64(layout.weight_base)

        chunks = chunk_ranges(extents[0], opts.threads)
        n_threads = opts.threads
        inner = prod(extents[1:])
        self.v = np.zeros((n_threads, 6), dtype=np.int64)
        self.in_a = np.zeros(n_threads, dtype=np.int64)
        self.w_a = np.zeros(n_threads, dtype=np.int64)
        self.out_a = np.zeros(n_threads, dtype=np.int64)
        self.remaining = np.zeros(n_threads, dtype=np.int64)
        self.local = np.zeros(n_threads, dtype=np.int64)
        self.pending = np.zeros(n_threads, dtype=np.int64)
        alive = []
        for t, (lo, hi) in enumerate(chunks):
            self.v[t, 0] = lo
            self.in_a[t] = layout.input_base + lo * self.cin[0]
            self.w_a[t] = layout.weight_base + lo * self.cw[0]
            self.out_a[t] = layout.out_base + lo * self.cout[0]
            self.remaining[t] = (hi - lo) * inner
            if hi > lo:
                alive.append(t)
        self.order = np.array(alive + [0] * (n_threads - len(alive)), dtype=np.int64)
        self.meta = np.zeros(7, dtype=np.int64)
        self.meta[_ACTIVE] = len(alive)
        self.meta[_LIMIT] = -1 if opts.instr_limit is None else opts.instr_limit
        self.n_threads = n_threads

    @property
    def exhausted(self) -> bool:
        return self.meta[_ACTIVE] == 0 or self.meta[_DONE] == 1

    def fill(self, addr: np.ndarray, tid: np.ndarray, pre: np.ndarray) -> int:
        return _gen_chunk(
            self.v,
            self.in_a,
            self.w_a,
            self.out_a,
            self.remaining,
            self.local,
            self.pending,
            self.order,
            self.meta,
            self.extents,
            self.cin,
            self.cw,
            self.cout,
            self.body,
            self.k_ticks,
            self.atomic,
            self.partial,
            self.sparse,
            self.wz,
            self.az,
            self.in_base,
            self.w_base,
            addr,
            tid,
            pre,
            np.int64(len(addr)),
        )


def simulate_fast(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    config: CacheConfig,
    opts: TraceOptions | None = None,
    layout: ArrayLayout | None = None,
    window: int | None = None,
) -> CacheStats:
    """Fused generate+simulate; same CacheStats the reference path produces."""
    opts = opts or TraceOptions()
    layout = layout or ArrayLayout.from_layer(layer)
    if not supports(config):
        raise ConfigError("fast path handles exactly two lru/random levels")
    l1, l2 = config.levels
    state = _GenState(layer, perm, layout, opts)

    tags1 = np.full(l1.n_sets * l1.assoc, -1, dtype=np.int64)
    st1 = np.zeros(l1.n_sets * l1.assoc, dtype=np.int64)
    tags2 = np.full(l2.n_sets * l2.assoc, -1, dtype=np.int64)
    st2 = np.zeros(l2.n_sets * l2.assoc, dtype=np.int64)
    cstate = np.zeros(2, dtype=np.int64)
    rng = np.array([seed_state(l1.seed), seed_state(l2.seed)], dtype=np.uint64)
    counters = np.zeros(4, dtype=np.int64)  # l1 hits, l2 hits, mem, ticks
    thread_cycles = np.zeros(state.n_threads, dtype=np.int64)

    if window is not None:
        if window < 1:
            raise ConfigError("window must be >= 1")
        approx = opts.instr_limit
        if approx is None:
            from .tracegen import ref_count

            approx = ref_count(layer, perm, opts)["events"]
        n_pts = approx // window + 8
        win = np.array([window, 0, 0, 0], dtype=np.int64)
        pts_at = np.zeros(n_pts, dtype=np.int64)
        pts_ipc = np.zeros(n_pts, dtype=np.float64)
    else:
        win = np.array([0, 0, 0, 0], dtype=np.int64)
        pts_at = np.zeros(1, dtype=np.int64)
        pts_ipc = np.zeros(1, dtype=np.float64)
    pts_n = np.zeros(1, dtype=np.int64)

    addr = np.empty(_CHUNK, dtype=np.int64)
    tid = np.empty(_CHUNK, dtype=np.int64)
    pre = np.empty(_CHUNK, dtype=np.int64)
    while not state.exhausted:
        n = state.fill(addr, tid, pre)
        if n:
            _sim_chunk(
                addr,
                tid,
                pre,
                np.int64(n),
                tags1,
                st1,
                tags2,
                st2,
                cstate,
                rng,
                np.int64(l1.block_bytes.bit_length() - 1),
                np.int64(l2.block_bytes.bit_length() - 1),
                np.int64(l1.n_sets),
                np.int64(l2.n_sets),
                np.int64(l1.assoc),
                np.int64(l2.assoc),
                np.int64(1 if l1.policy == "random" else 0),
                np.int64(1 if l2.policy == "random" else 0),
                np.int64(l1.latency),
                np.int64(l2.latency),
                np.int64(config.mem_latency),
                counters,
                thread_cycles,
                win,
                pts_at,
                pts_ipc,
                pts_n,
            )
        elif not state.exhausted:
            raise RuntimeError("generator stalled")  # cap always fits a turn

    # trailing ticks queued behind each thread's last reference
    for t in range(state.n_threads):
        if state.pending[t]:
            _flush_ticks(
                np.int64(state.pending[t]), np.int64(t), counters, thread_cycles,
                win, pts_at, pts_ipc, pts_n,
            )
            state.pending[t] = 0

    l1_hits = int(counters[0])
    l2_hits = int(counters[1])
    mem = int(counters[2])
    ticks = int(counters[3])
    reads = int(state.meta[_READS])
    writes = int(state.meta[_WRITES])
    # idle threads (empty or never-reached chunks) are always trailing; the
    # reference path only reports threads that appear in the stream
    n_seen = state.n_threads
    while n_seen > 1 and thread_cycles[n_seen - 1] == 0:
        n_seen -= 1
    per_thread = tuple(int(c) for c in thread_cycles[:n_seen])
    stats = CacheStats(
        level_hits=(l1_hits, l2_hits),
        level_misses=(l2_hits + mem, mem),
        memory_accesses=mem,
        reads=reads,
        writes=writes,
        nonmem_ticks=ticks,
        cycles=sum(per_thread),
        thread_cycles=per_thread,
        ipc_series=[(int(a), float(v)) for a, v in zip(pts_at[: pts_n[0]], pts_ipc[: pts_n[0]])]
        if window is not None
        else None,
    )
    stats.check_identity(config)
    return stats


def trace_addresses(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    opts: TraceOptions | None = None,
    layout: ArrayLayout | None = None,
) -> np.ndarray:
    """Byte addresses of every memory reference, in stream order."""
    opts = opts or TraceOptions()
    layout = layout or ArrayLayout.from_layer(layer)
    state = _GenState(layer, perm, layout, opts)
    addr = np.empty(_CHUNK, dtype=np.int64)
    tid = np.empty(_CHUNK, dtype=np.int64)
    pre = np.empty(_CHUNK, dtype=np.int64)
    parts = []
    while not state.exhausted:
        n = state.fill(addr, tid, pre)
        if n:
            parts.append(addr[:n].copy())
        elif not state.exhausted:
            raise RuntimeError("generator stalled")
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)
