"""C source emitter for one (layer, loop order, thread count) combination.

The emitted file is a self-contained C99 program with the six loops written
out in the requested order.  Index arithmetic is the additive form: every
array index is a running sum updated by a constant stride at the bottom of
each loop body, so the nest itself contains no multiplications.  Because
the text is meant to be *read* as the executed schedule, the header tells
the user to compile with optimizations off; an optimizing compiler would
re-order the very structure under study.

Output is a pure function of the inputs: same layer, order and options give
byte-identical text.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .conv import (
    LayerParams,
    LoopDim,
    check_perm,
    innermost_dependent_depth,
    needs_atomic,
    perm_str,
    word_strides,
)
from .permindex import index_of

# fill constants: one LCG shared by validation fills in generated C and the
# python-side expected-checksum evaluator
_LCG_SEED = 2463534242
_LCG_MUL = 1664525
_LCG_ADD = 1013904223
_MASK32 = 0xFFFFFFFF

_ARRAYS = ("in_arr", "w_arr", "out_arr")


class CodegenError(ValueError):
    pass


@dataclass(frozen=True)
class CodegenOptions:
    """Knobs for the emitted program."""

    threads: int = 1
    partial_sums: bool = True
    emit_validation: bool = False

    def __post_init__(self):
        if self.threads < 1:
            raise CodegenError(f"threads must be >= 1, got {self.threads}")


def _stride_name(array: str, dim: LoopDim) -> str:
    prefix = {"in_arr": "IN", "w_arr": "W", "out_arr": "OUT"}[array]
    return f"{prefix}_STRIDE_{dim.short.upper()}"


def source_filename(layer: LayerParams, perm: Sequence[LoopDim]) -> str:
    """`<layer>_<permindex>.c`, perm index in lexicographic order."""
    dims = check_perm(perm)
    return f"{layer.key}_lex{index_of(dims, 'lex'):03d}.c"


def emit_c(
    layer: LayerParams,
    perm: Sequence[LoopDim],
    opts: CodegenOptions | None = None,
) -> str:
    """Emit the full C source text for one loop ordering."""
    opts = opts or CodegenOptions()
    dims = check_perm(perm)
    strides = word_strides(layer)
    extents = layer.extents(dims)
    dep = innermost_dependent_depth(dims)
    atomic = needs_atomic(dims, opts.threads)
    parallel = opts.threads > 1

    lines: list[str] = []
    w = lines.append

    w("/*")
    w(" * Direct convolution with a fixed ordering of the six nested loops.")
    w(f" * layer: out={layer.out_channels} in={layer.in_channels}"
      f" img={layer.img_w}x{layer.img_h} ker={layer.ker_w}x{layer.ker_h}")
    w(f" * loop order (outermost first): {perm_str(dims)}")
    w(f" * threads: {opts.threads}   partial sums: {'on' if opts.partial_sums else 'off'}")
    w(" *")
    w(" * Build with optimizations OFF so the written loop structure is the")
    w(" * executed one (the ordering under study would otherwise be rewritten")
    w(" * by the compiler):")
    flag = " -fopenmp" if parallel else ""
    w(f" *     gcc -std=c99 -O0{flag} <this file> -o conv")
    w(" */")
    w("#include <stdint.h>")
    w("#include <stdio.h>")
    w("#include <stdlib.h>")
    w("")
    w("/* array sizes, in 4-byte words */")
    w(f"#define IN_WORDS {layer.input_words}u")
    w(f"#define W_WORDS {layer.weight_words}u")
    w(f"#define OUT_WORDS {layer.out_words}u")
    w("")
    w("/* per-dimension word strides; every index below is a running sum of")
    w("   these, so the nest itself multiplies nothing */")
    for array in _ARRAYS:
        ai = _ARRAYS.index(array)
        for dim in LoopDim:
            s = strides[dim][ai]
            if s:
                w(f"#define {_stride_name(array, dim)} {s}u")
    w("")
    w("int main(void) {")
    w("    uint32_t *in_arr = malloc(IN_WORDS * sizeof(uint32_t));")
    w("    uint32_t *w_arr = malloc(W_WORDS * sizeof(uint32_t));")
    w("    uint32_t *out_arr = malloc(OUT_WORDS * sizeof(uint32_t));")
    w("    if (!in_arr || !w_arr || !out_arr) {")
    w('        fprintf(stderr, "alloc failed\\n");')
    w("        return 1;")
    w("    }")
    if opts.emit_validation:
        w("    /* deterministic fill; the checksum printed at the end is the")
        w("       same for every loop ordering (uint32 accumulation commutes) */")
        w(f"    uint32_t rng = {_LCG_SEED}u;")
        w("    for (uint32_t k = 0; k < W_WORDS; k++) {")
        w(f"        rng = rng * {_LCG_MUL}u + {_LCG_ADD}u;")
        w("        w_arr[k] = rng >> 16;")
        w("    }")
        w("    for (uint32_t k = 0; k < IN_WORDS; k++) {")
        w(f"        rng = rng * {_LCG_MUL}u + {_LCG_ADD}u;")
        w("        in_arr[k] = rng >> 16;")
        w("    }")
    else:
        w("    /* inputs left unfilled: only the access schedule is timed */")
    w("    for (uint32_t k = 0; k < OUT_WORDS; k++) {")
    w("        out_arr[k] = 0u;")
    w("    }")
    w("")

    # current running-index variable per array; starts as the literal zero
    cur = {a: "0u" for a in _ARRAYS}
    pad = "    "

    for depth, d in enumerate(dims):
        indent = pad * (depth + 1)
        inner = pad * (depth + 2)
        var = d.short
        if parallel and depth == 0:
            w(f"{indent}#pragma omp parallel for schedule(static) num_threads({opts.threads})")
            w(f"{indent}for (int32_t {var} = 0; {var} < {extents[depth]}; {var}++) {{")
            w(f"{inner}/* chunk entry: rebuild the outermost running sums from {var},")
            w(f"{inner}   keeping them thread-private */")
            for ai, array in enumerate(_ARRAYS):
                if strides[d][ai]:
                    name = f"{array[:-4]}_s0"
                    w(f"{inner}uint32_t {name} = (uint32_t){var} * {_stride_name(array, d)};")
                    cur[array] = name
        else:
            # open a fresh running sum for each array this loop's dim moves
            for ai, array in enumerate(_ARRAYS):
                if strides[d][ai]:
                    name = f"{array[:-4]}_s{depth}"
                    w(f"{indent}uint32_t {name} = {cur[array]};")
                    cur[array] = name
            w(f"{indent}for (int32_t {var} = 0; {var} < {extents[depth]}; {var}++) {{")
        if opts.partial_sums and depth == dep:
            w(f"{inner}uint32_t acc = 0u;")

    body = pad * 7
    if opts.partial_sums:
        w(f"{body}acc += in_arr[{cur['in_arr']}] * w_arr[{cur['w_arr']}];")
    else:
        if atomic:
            w(f"{body}#pragma omp atomic")
        w(f"{body}out_arr[{cur['out_arr']}] += in_arr[{cur['in_arr']}] * w_arr[{cur['w_arr']}];")
    out_at_dep = cur["out_arr"]
    if opts.partial_sums and dep == 5:
        # the out index depends on the innermost loop: flush every iteration
        if atomic:
            w(f"{body}#pragma omp atomic")
        w(f"{body}out_arr[{out_at_dep}] += acc;")

    # close in reverse order; the bottom of each body advances that loop's
    # running sums by one stride
    for depth in range(5, -1, -1):
        d = dims[depth]
        indent = pad * (depth + 1)
        inner = pad * (depth + 2)
        for ai, array in enumerate(_ARRAYS):
            if strides[d][ai] and not (parallel and depth == 0):
                w(f"{inner}{array[:-4]}_s{depth} += {_stride_name(array, d)};")
        w(f"{indent}}} /* end {d.short} */")
        if opts.partial_sums and depth == dep + 1:
            # every loop the out index ignores has closed: flush the register
            if atomic:
                w(f"{indent}#pragma omp atomic")
            w(f"{indent}out_arr[{out_at_dep}] += acc;")

    w("")
    if opts.emit_validation:
        w("    uint64_t checksum = 0u;")
        w("    for (uint32_t k = 0; k < OUT_WORDS; k++) {")
        w("        checksum += out_arr[k];")
        w("    }")
        w('    printf("checksum %llu\\n", (unsigned long long)checksum);')
    w("    free(in_arr);")
    w("    free(w_arr);")
    w("    free(out_arr);")
    w("    return 0;")
    w("}")
    return "\n".join(lines) + "\n"


def expected_checksum(layer: LayerParams) -> int:
    """The checksum a validation build prints, computed host-side.

    Mirrors the generated program exactly: LCG fill of weights then input,
    uint32 multiply-accumulate, uint64 sum over the out array.  Used by the
    compile-and-run test and by `validate` to pin the value without a
    compiler present.
    """
    import numpy as np

    rng = _LCG_SEED
    n_w, n_in = layer.weight_words, layer.input_words
    vals = np.empty(n_w + n_in, dtype=np.uint32)
    for k in range(n_w + n_in):
        rng = (rng * _LCG_MUL + _LCG_ADD) & _MASK32
        vals[k] = rng >> 16
    wts = vals[:n_w].reshape(layer.out_channels, layer.in_channels, layer.ker_h, layer.ker_w)
    inp = vals[n_w:].reshape(layer.in_channels, layer.padded_h, layer.padded_w)
    h, w_ = layer.img_h, layer.img_w
    out = np.zeros((layer.out_channels, h, w_), dtype=np.uint32)
    for ky in range(layer.ker_h):
        for kx in range(layer.ker_w):
            window = inp[:, ky : ky + h, kx : kx + w_]
            out += np.einsum(
                "oi,ihw->ohw", wts[:, :, ky, kx].astype(np.uint32), window,
                dtype=np.uint32, casting="unsafe",
            )
    return int(out.sum(dtype=np.uint64))
