"""Fused generator+simulator must be bit-identical to the reference path."""
import pytest

from loopnest import fastpath
from loopnest.cachesim import (
    CacheConfig,
    CacheLevelConfig,
    ConfigError,
    simulate,
    two_level,
)
from loopnest.conv import LayerParams
from loopnest.permindex import perm_of
from loopnest.tracegen import MemRef, SparsityOptions, TraceOptions, generate_trace


def assert_stats_equal(a, b, ipc=False):
    assert a.level_hits == b.level_hits
    assert a.level_misses == b.level_misses
    assert a.memory_accesses == b.memory_accesses
    assert (a.reads, a.writes, a.nonmem_ticks) == (b.reads, b.writes, b.nonmem_ticks)
    assert a.cycles == b.cycles
    assert a.thread_cycles == b.thread_cycles
    if ipc:
        assert a.ipc_series == b.ipc_series


LAYERS = [
    LayerParams(3, 2, 5, 4, 2, 3),
    LayerParams(2, 2, 3, 3, 1, 1),
    LayerParams(1, 4, 4, 4, 3, 3),
]
PERMS = [0, 99, 719]


@pytest.mark.parametrize("layer", LAYERS, ids=lambda l: l.key)
@pytest.mark.parametrize("perm_idx", PERMS)
def test_parity_single_thread(layer, perm_idx):
    perm = perm_of(perm_idx, "lex")
    config = two_level(1, 4, seed=2)
    opts = TraceOptions()
    ref = simulate(generate_trace(layer, perm, opts=opts), config)
    fast = fastpath.simulate_fast(layer, perm, config, opts)
    assert_stats_equal(ref, fast)


@pytest.mark.parametrize("threads", [2, 3, 8])
@pytest.mark.parametrize("partial", [True, False])
def test_parity_threads_and_dense(threads, partial):
    layer = LayerParams(4, 3, 6, 5, 2, 2)
    perm = perm_of(371, "lex")
    config = two_level(1, 8, seed=1)
    opts = TraceOptions(partial_sums=partial, threads=threads, body_ticks=2)
    ref = simulate(generate_trace(layer, perm, opts=opts), config)
    fast = fastpath.simulate_fast(layer, perm, config, opts)
    assert_stats_equal(ref, fast)


def test_parity_with_sparsity_and_limit():
    layer = LayerParams(3, 3, 6, 6, 3, 3)
    perm = perm_of(241, "lex")
    config = two_level(1, 4, seed=5)
    opts = TraceOptions(
        sparsity=SparsityOptions(0.7, 0.9, seed=4), instr_limit=5000, body_ticks=4
    )
    ref = simulate(generate_trace(layer, perm, opts=opts), config)
    fast = fastpath.simulate_fast(layer, perm, config, opts)
    assert_stats_equal(ref, fast)


def test_parity_odd_geometry():
    layer = LayerParams(3, 2, 5, 5, 2, 2)
    perm = perm_of(523, "lex")
    lvls = (
        CacheLevelConfig(size_bytes=3 * 32 * 2, block_bytes=32, assoc=3, latency=2, policy="lru"),
        CacheLevelConfig(size_bytes=5 * 32 * 4, block_bytes=32, assoc=4, latency=7, policy="random", seed=6),
    )
    config = CacheConfig(levels=lvls, mem_latency=25)
    opts = TraceOptions(threads=2)
    ref = simulate(generate_trace(layer, perm, opts=opts), config)
    fast = fastpath.simulate_fast(layer, perm, config, opts)
    assert_stats_equal(ref, fast)


def test_parity_ipc_series_single_thread():
    layer = LayerParams(4, 2, 6, 6, 2, 2)
    perm = perm_of(77, "lex")
    config = two_level(1, 4)
    opts = TraceOptions()
    ref = simulate(generate_trace(layer, perm, opts=opts), config, window=500)
    fast = fastpath.simulate_fast(layer, perm, config, opts, window=500)
    assert_stats_equal(ref, fast, ipc=True)


def test_supports_gate():
    assert fastpath.supports(two_level(16, 128))
    three = CacheConfig(
        levels=(
            CacheLevelConfig(size_bytes=1024, block_bytes=32, assoc=1, latency=1),
            CacheLevelConfig(size_bytes=2048, block_bytes=32, assoc=2, latency=4),
            CacheLevelConfig(size_bytes=4096, block_bytes=32, assoc=4, latency=9),
        ),
        mem_latency=30,
    )
    assert not fastpath.supports(three)
    opt_cfg = CacheConfig(
        levels=(
            CacheLevelConfig(size_bytes=1024, block_bytes=32, assoc=2, latency=1, policy="opt"),
            CacheLevelConfig(size_bytes=2048, block_bytes=32, assoc=2, latency=4),
        ),
        mem_latency=30,
    )
    assert not fastpath.supports(opt_cfg)
    with pytest.raises(ConfigError):
        fastpath.simulate_fast(LayerParams(1, 1, 1, 1, 1, 1), perm_of(0, "lex"), opt_cfg)


def test_trace_addresses_match_reference_stream():
    layer = LayerParams(3, 2, 4, 4, 2, 2)
    for perm_idx in (0, 300, 719):
        perm = perm_of(perm_idx, "lex")
        for opts in (TraceOptions(), TraceOptions(partial_sums=False, threads=3)):
            want = [
                ev.address
                for ev in generate_trace(layer, perm, opts=opts)
                if isinstance(ev, MemRef)
            ]
            got = fastpath.trace_addresses(layer, perm, opts)
            assert got.tolist() == want
