"""Sweep harness: determinism, resume, presets, config handling."""
import json

import pytest

from loopnest.cachesim import (
    CacheConfig,
    CacheLevelConfig,
    ConfigError,
    two_level,
)
from loopnest.conv import LayerParams
from loopnest.explorer import (
    RESULT_COLUMNS,
    SQUEEZENET_LAYERS,
    DesignSpace,
    check_opt_feasible,
    load_config_file,
    load_layers_file,
    preset_layers,
    preset_space,
    read_results,
    resolve_workers,
    run_point,
    run_sweep,
    synthetic_layers,
    tile_sweep,
)
from loopnest.fastpath import simulate_fast
from loopnest.permindex import perm_of
from loopnest.tracegen import TraceOptions


def small_space(**kw):
    defaults = dict(
        layers=(("a", LayerParams(4, 4, 5, 5, 2, 2)), ("b", LayerParams(3, 5, 4, 4, 2, 2))),
        perms=tuple(perm_of(i, "lex") for i in (0, 99, 719)),
        configs=(("base", two_level(1, 4)),),
        thread_counts=(1, 2),
    )
    defaults.update(kw)
    return DesignSpace(**defaults)


def test_design_space_validation():
    with pytest.raises(ValueError):
        small_space(layers=())
    with pytest.raises(ValueError):
        small_space(perms=())
    with pytest.raises(ValueError):
        small_space(thread_counts=(0,))
    with pytest.raises(ValueError):
        small_space(layers=(("a", LayerParams(1, 1, 1, 1, 1, 1)),) * 2)  # duplicate id


def test_space_hash_reflects_content():
    a, b = small_space(), small_space()
    assert a.space_hash() == b.space_hash()
    c = small_space(thread_counts=(1,))
    assert a.space_hash() != c.space_hash()
    assert a.n_points == 2 * 3 * 1 * 2


def test_run_point_reports_wall_cycles():
    layer = LayerParams(4, 4, 6, 6, 2, 2)
    perm = perm_of(5, "lex")
    config = two_level(1, 4)
    opts = TraceOptions(threads=3)
    row = run_point(layer, perm, config, opts)
    stats = simulate_fast(layer, perm, config, opts)
    assert row["cycles"] == stats.wall_cycles == max(stats.thread_cycles)
    assert row["refs"] == stats.refs


def test_sweep_deterministic_across_workers(tmp_path):
    space = small_space()
    out1, out2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
    run_sweep(space, out1, workers=1)
    run_sweep(space, out2, workers=3)
    assert out1.read_bytes() == out2.read_bytes()


def test_sweep_resume_completes_partial_file(tmp_path):
    space = small_space()
    out = tmp_path / "r.csv"
    first = run_sweep(space, out, workers=1)
    assert first["points_run"] == space.n_points
    full = out.read_bytes()

    lines = full.decode().splitlines(keepends=True)
    keep = len(lines) // 2
    out.write_text("".join(lines[:keep]))
    second = run_sweep(space, out, workers=1)
    assert second["points_run"] == space.n_points - (keep - 1)
    assert second["points_skipped"] == keep - 1
    assert out.read_bytes() == full


def test_sweep_meta_sidecar(tmp_path):
    space = small_space()
    out = tmp_path / "m.csv"
    run_sweep(space, out, workers=1)
    meta = json.loads((tmp_path / "m.csv.meta.json").read_text())
    assert meta["space_sha256"] == space.space_hash()
    assert meta["columns"] == list(RESULT_COLUMNS)
    assert meta["rows"] == space.n_points
    rows = read_results(out)
    assert len(rows) == space.n_points
    assert sorted(rows[0]) == sorted(RESULT_COLUMNS)


def test_read_results_rejects_foreign_csv(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_results(bad)


def test_opt_configs_need_bounded_traces():
    opt_cfg = CacheConfig(
        levels=(
            CacheLevelConfig(size_bytes=1024, block_bytes=32, assoc=2, latency=1, policy="opt"),
            CacheLevelConfig(size_bytes=4096, block_bytes=32, assoc=4, latency=9),
        ),
        mem_latency=30,
    )
    big_layer = (("big", LayerParams(64, 64, 64, 64, 3, 3)),)
    unbounded = small_space(layers=big_layer, configs=(("opt", opt_cfg),), instr_limit=None,
                            thread_counts=(1,))
    with pytest.raises(ConfigError):
        check_opt_feasible(unbounded)
    bounded = small_space(configs=(("opt", opt_cfg),), instr_limit=10_000, thread_counts=(1,))
    check_opt_feasible(bounded)  # fine


def test_opt_point_agrees_with_reference(tmp_path):
    opt_cfg = CacheConfig(
        levels=(
            CacheLevelConfig(size_bytes=256, block_bytes=32, assoc=2, latency=1, policy="opt"),
            CacheLevelConfig(size_bytes=1024, block_bytes=32, assoc=4, latency=9),
        ),
        mem_latency=30,
    )
    space = small_space(configs=(("opt", opt_cfg),), thread_counts=(1,), instr_limit=5000)
    out = tmp_path / "opt.csv"
    run_sweep(space, out, workers=1)
    rows = read_results(out)
    assert len(rows) == space.n_points
    assert all(r["cycles"] > 0 for r in rows)


def test_tile_sweep_schedule():
    layer = LayerParams(8, 8, 8, 8, 2, 2)
    rows = tile_sweep(layer, perm_of(0, "lex"), total_tiles=16, bank_kb_per_tile=64,
                      instr_limit=50_000)
    assert len(rows) == 15
    for row in rows:
        assert row["compute_tiles"] + row["l2_tiles"] == 16
        assert row["threads"] == 8 * row["compute_tiles"]
        assert row["l2_kb"] == row["l2_tiles"] * 64
    assert rows[7]["l2_kb"] == 512


def test_squeezenet_preset_layers():
    names = [n for n, _ in SQUEEZENET_LAYERS]
    assert len(names) == 8 == len(set(names))
    by_name = dict(SQUEEZENET_LAYERS)
    first = by_name[names[0]]
    assert (first.out_channels, first.in_channels) == (256, 32)
    assert (first.img_w, first.img_h, first.ker_w, first.ker_h) == (28, 28, 3, 3)
    assert any(
        lay.out_channels == 1000 and lay.in_channels == 512 for lay in by_name.values()
    )


def test_synthetic_presets_shape():
    assert len(preset_layers("synthetic-216")) == 216
    assert len(preset_layers("synthetic-36")) == 36
    grid = synthetic_layers((1, 2), (3,), (1, 3))
    assert len(grid) == 4
    ids = [n for n, _ in grid]
    assert len(set(ids)) == 4
    space = preset_space("synthetic-36", perms=(perm_of(0, "lex"),))
    assert space.thread_counts == (8,)
    assert space.instr_limit == 100_000_000
    space216 = preset_space("synthetic-216", perms=(perm_of(0, "lex"),))
    assert space216.thread_counts == (1,)
    assert space216.instr_limit == 500_000_000


def test_layers_file_roundtrip(tmp_path):
    path = tmp_path / "layers.txt"
    path.write_text("# comment\nfirst: 1,2,3,4,1,1\n\nsecond: 9x9x9x9x3x3\n")
    layers = load_layers_file(path)
    assert [n for n, _ in layers] == ["first", "second"]
    assert layers[0][1] == LayerParams(1, 2, 3, 4, 1, 1)
    bad = tmp_path / "bad.txt"
    bad.write_text("oops\n")
    with pytest.raises(ValueError):
        load_layers_file(bad)


def test_config_file_roundtrip(tmp_path):
    from loopnest.cachesim import config_to_dict

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"mine": config_to_dict(two_level(16, 128, seed=3))}))
    named = load_config_file(path)
    assert named[0][0] == "mine"
    assert named[0][1] == two_level(16, 128, seed=3)


def test_resolve_workers_env(monkeypatch):
    monkeypatch.setenv("LOOPNEST_WORKERS", "5")
    assert resolve_workers(None) == 5
    assert resolve_workers(2) == 2
    monkeypatch.delenv("LOOPNEST_WORKERS")
    assert resolve_workers(None) >= 1
