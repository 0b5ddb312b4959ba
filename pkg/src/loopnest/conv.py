"""Core model of the six-deep direct convolution loop nest.

The computation is

    out[o][y][x] += input[i][y+ky][x+kx] * weights[o][i][ky][kx]

iterated over six loop dimensions.  Any of the 720 orderings of those six
loops computes the same result; everything else in this package (traces,
cache behaviour, generated C) is about how the orderings differ in memory
behaviour.  Output extents equal the image extents: the input is stored
pre-padded to (img + ker - 1) per axis, so no boundary handling is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
from numba import njit


class LoopDim(IntEnum):
    """The six loop dimensions, in canonical (outermost-first) order."""

    OUT_CHAN = 0
    IN_CHAN = 1
    IMG_Y = 2
    IMG_X = 3
    KER_Y = 4
    KER_X = 5

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    LoopDim.OUT_CHAN: "o",
    LoopDim.IN_CHAN: "i",
    LoopDim.IMG_Y: "y",
    LoopDim.IMG_X: "x",
    LoopDim.KER_Y: "ky",
    LoopDim.KER_X: "kx",
}
_BY_SHORT = {v: k for k, v in _SHORT_NAMES.items()}

CANONICAL_ORDER: tuple[LoopDim, ...] = tuple(LoopDim)

# The out array is indexed by (o, y, x) only; these dimensions decide where
# partial-sum flushes land and whether a parallel outer loop needs atomics.
OUT_DEPENDENT_DIMS = frozenset(
    (LoopDim.OUT_CHAN, LoopDim.IMG_Y, LoopDim.IMG_X)
)

Permutation = tuple  # tuple of six distinct LoopDim, outermost first

WORD_BYTES = 4


def check_perm(perm: Sequence[LoopDim]) -> tuple[LoopDim, ...]:
    """Validate and normalize a loop ordering to a tuple of LoopDim."""
    dims = tuple(LoopDim(d) for d in perm)
    if len(dims) != 6 or len(set(dims)) != 6:
        raise ValueError(f"need all six loop dims exactly once, got {perm!r}")
    return dims


def parse_perm(text: str) -> tuple[LoopDim, ...]:
    """Parse a loop ordering like 'o,i,y,x,ky,kx' (commas or spaces)."""
    parts = text.replace(",", " ").lower().split()
    try:
        dims = [_BY_SHORT[p] for p in parts]
    except KeyError as e:
        raise ValueError(f"unknown loop dim {e.args[0]!r} in {text!r}") from None
    return check_perm(dims)


def perm_str(perm: Sequence[LoopDim]) -> str:
    return ",".join(LoopDim(d).short for d in perm)


def innermost_dependent_depth(perm: Sequence[LoopDim]) -> int:
    """Depth (0 = outermost) of the innermost loop the out index depends on."""
    dims = check_perm(perm)
    return max(j for j, d in enumerate(dims) if d in OUT_DEPENDENT_DIMS)


def needs_atomic(perm: Sequence[LoopDim], threads: int) -> bool:
    """True when a parallel outer loop can race on out updates.

    Splitting the outermost loop across threads partitions the out array
    only if that loop is one of the dimensions the out index depends on;
    otherwise two threads can update the same element and the store needs
    an atomic.
    """
    dims = check_perm(perm)
    return threads > 1 and dims[0] not in OUT_DEPENDENT_DIMS


@dataclass(frozen=True)
class LayerParams:
    """Shape of one convolution layer."""

    out_channels: int
    in_channels: int
    img_w: int
    img_h: int
    ker_w: int
    ker_h: int

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive int, got {v!r}")

    @property
    def padded_h(self) -> int:
        return self.img_h + self.ker_h - 1

    @property
    def padded_w(self) -> int:
        return self.img_w + self.ker_w - 1

    def extent(self, dim: LoopDim) -> int:
        return (
            self.out_channels,
            self.in_channels,
            self.img_h,
            self.img_w,
            self.ker_h,
            self.ker_w,
        )[LoopDim(dim)]

    def extents(self, perm: Sequence[LoopDim] = CANONICAL_ORDER) -> tuple[int, ...]:
        return tuple(self.extent(d) for d in perm)

    @property
    def iteration_count(self) -> int:
        n = 1
        for d in CANONICAL_ORDER:
            n *= self.extent(d)
        return n

    @property
    def key(self) -> str:
        """Compact layer id, params in CLI order: out,in,w,h,kw,kh."""
        return "x".join(
            str(v)
            for v in (
                self.out_channels,
                self.in_channels,
                self.img_w,
                self.img_h,
                self.ker_w,
                self.ker_h,
            )
        )

    @classmethod
    def from_key(cls, text: str) -> "LayerParams":
        """Parse '64x16x14x14x3x3' or '64,16,14,14,3,3' (CLI param order)."""
        parts = text.replace(",", "x").split("x")
        if len(parts) != 6:
            raise ValueError(f"need 6 layer params, got {text!r}")
        return cls(*(int(p) for p in parts))

    @property
    def input_words(self) -> int:
        return self.in_channels * self.padded_h * self.padded_w

    @property
    def weight_words(self) -> int:
        return self.out_channels * self.in_channels * self.ker_h * self.ker_w

    @property
    def out_words(self) -> int:
        return self.out_channels * self.img_h * self.img_w


@dataclass(frozen=True)
class ArrayLayout:
    """Byte addresses of the three linearized row-major arrays.

    Words are 4 bytes; the regions are disjoint.  Addresses returned by the
    *_addr methods are byte addresses of 4-byte words.
    """

    layer: LayerParams
    input_base: int
    weight_base: int
    out_base: int

    @classmethod
    def from_layer(cls, layer: LayerParams, base: int = 0, align: int = 64) -> "ArrayLayout":
        def up(a: int) -> int:
            return (a + align - 1) // align * align

        input_base = up(base)
        weight_base = up(input_base + layer.input_words * WORD_BYTES)
        out_base = up(weight_base + layer.weight_words * WORD_BYTES)
        return cls(layer, input_base, weight_base, out_base)

    def input_addr(self, i: int, py: int, px: int) -> int:
        """Address of padded input element (i, py, px); py/px already include ky/kx."""
        l = self.layer
        return self.input_base + WORD_BYTES * ((i * l.padded_h + py) * l.padded_w + px)

    def weight_addr(self, o: int, i: int, ky: int, kx: int) -> int:
        l = self.layer
        return self.weight_base + WORD_BYTES * (
            ((o * l.in_channels + i) * l.ker_h + ky) * l.ker_w + kx
        )

    def out_addr(self, o: int, y: int, x: int) -> int:
        l = self.layer
        return self.out_base + WORD_BYTES * ((o * l.img_h + y) * l.img_w + x)

    def region(self, addr: int) -> str:
        """Which array a byte address falls in: 'input', 'weights' or 'out'."""
        l = self.layer
        if self.input_base <= addr < self.input_base + l.input_words * WORD_BYTES:
            return "input"
        if self.weight_base <= addr < self.weight_base + l.weight_words * WORD_BYTES:
            return "weights"
        if self.out_base <= addr < self.out_base + l.out_words * WORD_BYTES:
            return "out"
        raise ValueError(f"address {addr:#x} outside all regions")

    @property
    def end(self) -> int:
        return self.out_base + self.layer.out_words * WORD_BYTES


def word_strides(layer: LayerParams) -> dict[LoopDim, tuple[int, int, int]]:
    """Per-dimension word strides into (input, weights, out).

    Each array's linear word index is the sum over the six loop variables of
    var * stride; dims an array does not depend on have stride 0.  IMG_Y and
    KER_Y both advance the input by a padded row (the input row index is
    y + ky), and likewise IMG_X/KER_X by one word.
    """
    hp, wp = layer.padded_h, layer.padded_w
    return {
        LoopDim.OUT_CHAN: (
            0,
            layer.in_channels * layer.ker_h * layer.ker_w,
            layer.img_h * layer.img_w,
        ),
        LoopDim.IN_CHAN: (hp * wp, layer.ker_h * layer.ker_w, 0),
        LoopDim.IMG_Y: (wp, 0, layer.img_w),
        LoopDim.IMG_X: (1, 0, 1),
        LoopDim.KER_Y: (wp, layer.ker_w, 0),
        LoopDim.KER_X: (1, 1, 0),
    }


def _check_grids(layer: LayerParams, inp: np.ndarray, wts: np.ndarray):
    in_shape = (layer.in_channels, layer.padded_h, layer.padded_w)
    w_shape = (layer.out_channels, layer.in_channels, layer.ker_h, layer.ker_w)
    if inp.shape != in_shape:
        raise ValueError(f"input grid shape {inp.shape} != {in_shape}")
    if wts.shape != w_shape:
        raise ValueError(f"weight grid shape {wts.shape} != {w_shape}")


def oracle_convolve(layer: LayerParams, inp, wts) -> np.ndarray:
    """Reference result, evaluated in the canonical (o,i,y,x,ky,kx) order.

    Integer grids in, integer grid out, so the result is exact and
    independent of summation order; this is the ground truth the permuted
    evaluator is checked against.
    """
    inp = np.asarray(inp, dtype=np.int64)
    wts = np.asarray(wts, dtype=np.int64)
    _check_grids(layer, inp, wts)
    h, w = layer.img_h, layer.img_w
    out = np.zeros((layer.out_channels, h, w), dtype=np.int64)
    for ky in range(layer.ker_h):
        for kx in range(layer.ker_w):
            window = inp[:, ky : ky + h, kx : kx + w]
            out += np.einsum("oi,ihw->ohw", wts[:, :, ky, kx], window)
    return out


@njit(cache=True)
def _permuted_kernel(inp, wts, out, perm_codes):  # pragma: no cover - jitted
    # Generic six-deep nest driven by an odometer over the permuted extents,
    # with the partial sum held in a register until the innermost loop the
    # out index depends on closes.
    extents = np.empty(6, np.int64)
    shape = (
        out.shape[0],
        inp.shape[0],
        out.shape[1],
        out.shape[2],
        wts.shape[2],
        wts.shape[3],
    )
    inv = np.empty(6, np.int64)  # canonical dim -> depth in the nest
    for depth in range(6):
        extents[depth] = shape[perm_codes[depth]]
        inv[perm_codes[depth]] = depth

    dep = 0  # innermost depth carrying o, y or x
    for depth in range(6):
        if perm_codes[depth] == 0 or perm_codes[depth] == 2 or perm_codes[depth] == 3:
            dep = max(dep, depth)
    body = 1  # iterations per closing of that loop
    for depth in range(dep + 1, 6):
        body *= extents[depth]

    total = 1
    for depth in range(6):
        total *= extents[depth]

    v = np.zeros(6, np.int64)
    acc = np.int64(0)
    for t in range(total):
        o = v[inv[0]]
        i = v[inv[1]]
        y = v[inv[2]]
        x = v[inv[3]]
        ky = v[inv[4]]
        kx = v[inv[5]]
        acc += inp[i, y + ky, x + kx] * wts[o, i, ky, kx]
        if (t + 1) % body == 0:
            out[o, y, x] += acc
            acc = 0
        # odometer: step the innermost loop, carrying outward on wrap
        for depth in range(5, -1, -1):
            v[depth] += 1
            if v[depth] < extents[depth]:
                break
            v[depth] = 0


def permuted_convolve(layer: LayerParams, inp, wts, perm: Sequence[LoopDim]) -> np.ndarray:
    """Evaluate the convolution with the loops nested in `perm` order."""
    dims = check_perm(perm)
    inp = np.ascontiguousarray(np.asarray(inp, dtype=np.int64))
    wts = np.ascontiguousarray(np.asarray(wts, dtype=np.int64))
    _check_grids(layer, inp, wts)
    out = np.zeros((layer.out_channels, layer.img_h, layer.img_w), dtype=np.int64)
    perm_codes = np.array([int(d) for d in dims], dtype=np.int64)
    _permuted_kernel(inp, wts, out, perm_codes)
    return out
