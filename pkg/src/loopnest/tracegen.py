"""Memory access traces for a permuted convolution loop nest.

One innermost-body iteration reads one input word and one weight word and
spends `body_ticks` non-memory cycles.  The out array is touched in one of
two modes:

* dense: every iteration reads and writes out[o][y][x];
* partial sums: the running sum lives in a register and out is read/written
  once each time the innermost loop carrying o, y or x closes.

With several threads the outermost loop is split into contiguous chunks
(static schedule) and the per-thread streams interleave round-robin, one
innermost iteration per turn.  If the outermost dimension does not index
out, concurrent out updates need an atomic, modeled as one extra tick in
front of each out write.

Sparsity is modeled by seeded Bernoulli zero-masks over the weight and
input elements; an iteration whose operand is masked to zero costs one
tick (the skip check) and performs no memory accesses.

The generator here is the readable reference; `fastpath` reproduces its
semantics in compiled form for large sweeps.
"""
from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from math import prod
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .conv import (
    ArrayLayout,
    LayerParams,
    LoopDim,
    check_perm,
    innermost_dependent_depth,
    needs_atomic,
)


class RefKind(IntEnum):
    READ = 0
    WRITE = 1


class MemRef(NamedTuple):
    address: int
    kind: RefKind
    thread: int


class Tick(NamedTuple):
    thread: int


Event = MemRef | Tick


@dataclass(frozen=True)
class SparsityOptions:
    """Densities are the probability an element is non-zero."""

    weight_density: float = 1.0
    activation_density: float = 1.0
    seed: int = 1

    def __post_init__(self):
        for name in ("weight_density", "activation_density"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class TraceOptions:
    partial_sums: bool = True
    threads: int = 1
    body_ticks: int = 4
    instr_limit: int | None = None
    sparsity: SparsityOptions | None = None

    def __post_init__(self):
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ValueError(f"threads must be a positive int, got {self.threads!r}")
        if self.body_ticks < 0:
            raise ValueError("body_ticks must be >= 0")
        if self.instr_limit is not None and self.instr_limit < 1:
            raise ValueError("instr_limit must be >= 1 or None")


def chunk_ranges(extent: int, threads: int) -> list[tuple[int, int]]:
    """Contiguous static-schedule chunks of [0, extent); may be empty."""
    sizes = [len(part) for part in np.array_split(np.arange(extent), threads)]
    ranges = []
    start = 0
    for s in sizes:
        ranges.append((start, start + s))
        start += s
    return ranges


def zero_masks(layer: LayerParams, sparsity: SparsityOptions | None):
    """Boolean zero-masks (True = element is zero) for weights and input."""
    if sparsity is None:
        return None, None
    rng = np.random.default_rng(sparsity.seed)
    w_shape = (layer.out_channels, layer.in_channels, layer.ker_h, layer.ker_w)
    a_shape = (layer.in_channels, layer.padded_h, layer.padded_w)
    w_zero = rng.random(w_shape) >= sparsity.weight_density
    a_zero = rng.random(a_shape) >= sparsity.activation_density
    return w_zero, a_zero


def generate_trace(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    layout: ArrayLayout | None = None,
    opts: TraceOptions | None = None,
) -> Iterator[Event]:
    """Yield the ordered event stream (MemRef and Tick) for one nest."""
    dims = check_perm(perm)
    opts = opts or TraceOptions()
    layout = layout or ArrayLayout.from_layer(layer)
    extents = layer.extents(dims)
    depth_of = {d: j for j, d in enumerate(dims)}
    dep = innermost_dependent_depth(dims)
    body = prod(extents[dep + 1 :])
    atomic = needs_atomic(dims, opts.threads)
    k = opts.body_ticks
    w_zero, a_zero = zero_masks(layer, opts.sparsity)

    def turns(lo: int, hi: int, tid: int) -> Iterator[list[Event]]:
        local = 0
        inner = [range(e) for e in extents[1:]]
        for values in itertools.product(range(lo, hi), *inner):
            o = values[depth_of[LoopDim.OUT_CHAN]]
            i = values[depth_of[LoopDim.IN_CHAN]]
            y = values[depth_of[LoopDim.IMG_Y]]
            x = values[depth_of[LoopDim.IMG_X]]
            ky = values[depth_of[LoopDim.KER_Y]]
            kx = values[depth_of[LoopDim.KER_X]]
            masked = w_zero is not None and (
                w_zero[o, i, ky, kx] or a_zero[i, y + ky, x + kx]
            )
            ev: list[Event] = []
            if masked:
                ev.append(Tick(tid))
            else:
                ev.append(MemRef(layout.input_addr(i, y + ky, x + kx), RefKind.READ, tid))
                ev.append(MemRef(layout.weight_addr(o, i, ky, kx), RefKind.READ, tid))
                if not opts.partial_sums:
                    out_a = layout.out_addr(o, y, x)
                    ev.append(MemRef(out_a, RefKind.READ, tid))
                    if atomic:
                        ev.append(Tick(tid))
                    ev.append(MemRef(out_a, RefKind.WRITE, tid))
                ev.extend(Tick(tid) for _ in range(k))
            local += 1
            if opts.partial_sums and local % body == 0:
                out_a = layout.out_addr(o, y, x)
                ev.append(MemRef(out_a, RefKind.READ, tid))
                if atomic:
                    ev.append(Tick(tid))
                ev.append(MemRef(out_a, RefKind.WRITE, tid))
            yield ev

    active: deque[Iterator[list[Event]]] = deque()
    for tid, (lo, hi) in enumerate(chunk_ranges(extents[0], opts.threads)):
        if hi > lo:
            active.append(turns(lo, hi, tid))

    emitted = 0
    while active:
        gen = active.popleft()
        ev = next(gen, None)
        if ev is None:
            continue  # thread done; drop it from the rotation
        yield from ev
        emitted += len(ev)
        if opts.instr_limit is not None and emitted >= opts.instr_limit:
            return
        active.append(gen)


def skipped_iterations(layer: LayerParams, sparsity: SparsityOptions | None) -> int:
    """How many of the nest's iterations hit a zero operand, in closed form.

    Inclusion-exclusion over the two masks; never walks the nest, so it
    stays cheap for layers whose iteration count is astronomical.
    """
    if sparsity is None:
        return 0
    w_zero, a_zero = zero_masks(layer, sparsity)
    o_n, h, w = layer.out_channels, layer.img_h, layer.img_w
    kh, kw = layer.ker_h, layer.ker_w
    hp, wp = layer.padded_h, layer.padded_w
    wz = w_zero.astype(np.int64)
    az = a_zero.astype(np.int64)

    s_weight = int(wz.sum()) * h * w

    # input element (i, py, px) is read once per (y, ky) and (x, kx) split,
    # for every output channel
    py = np.arange(hp)
    cy = np.minimum(py, h - 1) - np.maximum(py - kh + 1, 0) + 1
    px = np.arange(wp)
    cx = np.minimum(px, w - 1) - np.maximum(px - kw + 1, 0) + 1
    s_act = o_n * int(np.einsum("ipq,p,q->", az, cy, cx))

    # overlap: per (i, ky, kx), zero-weight count over o times the count of
    # zero activations in the h x w window at offset (ky, kx)
    pad = np.zeros((layer.in_channels, hp + 1, wp + 1), dtype=np.int64)
    pad[:, 1:, 1:] = az.cumsum(axis=1).cumsum(axis=2)
    win = (
        pad[:, h : hp + 1, w : wp + 1]
        - pad[:, 0:kh, w : wp + 1]
        - pad[:, h : hp + 1, 0:kw]
        + pad[:, 0:kh, 0:kw]
    )
    s_both = int((wz.sum(axis=0) * win).sum())

    return s_weight + s_act - s_both


def ref_count(
    layer: LayerParams, perm: Sequence[LoopDim], opts: TraceOptions | None = None
) -> dict[str, int]:
    """Closed-form tallies of the untruncated stream (instr_limit ignored)."""
    dims = check_perm(perm)
    opts = opts or TraceOptions()
    extents = layer.extents(dims)
    iters = layer.iteration_count
    dep = innermost_dependent_depth(dims)
    closings = prod(extents[: dep + 1])
    atomic = needs_atomic(dims, opts.threads)
    skipped = skipped_iterations(layer, opts.sparsity)
    live = iters - skipped
    k = opts.body_ticks

    if opts.partial_sums:
        reads = 2 * live + closings
        writes = closings
    else:
        reads = 3 * live
        writes = live
    ticks = k * live + skipped + (writes if atomic else 0)
    return {
        "reads": reads,
        "writes": writes,
        "refs": reads + writes,
        "ticks": ticks,
        "events": reads + writes + ticks,
    }


def tally(events: Iterable[Event]) -> dict[str, int]:
    """Fold an event stream into the same counters ref_count predicts."""
    reads = writes = ticks = 0
    for ev in events:
        if isinstance(ev, MemRef):
            if ev.kind == RefKind.READ:
                reads += 1
            else:
                writes += 1
        else:
            ticks += 1
    return {
        "reads": reads,
        "writes": writes,
        "refs": reads + writes,
        "ticks": ticks,
        "events": reads + writes + ticks,
    }


TRACE_DTYPE = np.dtype([("address", "<u8"), ("kind", "<u1"), ("thread", "<u2")])
_KIND_CODE = {RefKind.READ: 0, RefKind.WRITE: 1}
_KIND_LETTER = {0: "R", 1: "W", 2: "T"}


def dump_trace(events: Iterable[Event], path: str, fmt: str = "csv") -> int:
    """Write a trace to disk; returns the event count.

    csv: `address,kind,thread` with kind R/W/T.  bin: packed records of
    TRACE_DTYPE (little-endian u64 address, u8 kind with 2 = tick, u16
    thread).
    """
    n = 0
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["address", "kind", "thread"])
            for ev in events:
                if isinstance(ev, MemRef):
                    writer.writerow([ev.address, _KIND_LETTER[_KIND_CODE[ev.kind]], ev.thread])
                else:
                    writer.writerow([0, "T", ev.thread])
                n += 1
        return n
    if fmt == "bin":
        with open(path, "wb") as fh:
            buf = []
            for ev in events:
                if isinstance(ev, MemRef):
                    buf.append((ev.address, _KIND_CODE[ev.kind], ev.thread))
                else:
                    buf.append((0, 2, ev.thread))
                n += 1
                if len(buf) >= 1 << 16:
                    np.array(buf, dtype=TRACE_DTYPE).tofile(fh)
                    buf.clear()
            if buf:
                np.array(buf, dtype=TRACE_DTYPE).tofile(fh)
        return n
    raise ValueError(f"unknown dump format {fmt!r}; expected csv or bin")
