"""End-to-end runs of every subcommand through main(argv)."""
import csv
import json
import os

import pytest

from loopnest.cli import main


def run(capsys, *argv):
    rc = main(list(argv))
    cap = capsys.readouterr()
    return rc, cap.out, cap.err


def write_layers(tmp_path, text="tiny: 2,2,3,3,2,2\n"):
    path = tmp_path / "layers.txt"
    path.write_text(text)
    return str(path)


def small_sweep(tmp_path, capsys, name="s.csv", extra=()):
    out = str(tmp_path / name)
    rc, _, err = run(
        capsys, "sweep", "--layers-file", write_layers(tmp_path),
        "--perms", "0,1,2", "--configs", "1:4", "--threads", "1",
        "--out", out, *extra,
    )
    assert rc == 0, err
    return out


def test_perms_table(capsys):
    rc, out, _ = run(capsys, "perms", "--n", "3", "--format", "json")
    assert rc == 0
    rows = json.loads(out)
    assert len(rows) == 6
    assert {r["lex"] for r in rows} == set(range(6))
    assert {r["hamiltonian"] for r in rows} == set(range(6))
    first = [r for r in rows if r["lex"] == 0][0]
    assert first["order"] == "0-1-2"


def test_perms_csv_default(capsys):
    rc, out, _ = run(capsys, "perms", "--n", "2")
    lines = out.strip().splitlines()
    assert rc == 0 and len(lines) == 3
    assert lines[0].split(",")[:2] == ["lex", "revlex"]


def test_trace_csv_and_bin(tmp_path, capsys):
    for fmt in ("csv", "bin"):
        out = str(tmp_path / f"t.{fmt}")
        rc, stdout, err = run(
            capsys, "trace", "--layer", "2,2,3,3,2,2", "--perm-lex", "0",
            "--format", fmt, "--out", out,
        )
        assert rc == 0 and out in stdout
        assert os.path.getsize(out) > 0
        assert "events" in err


def test_simulate_json_matches_library(capsys):
    rc, out, _ = run(
        capsys, "simulate", "--layer", "4,3,6,5,2,2", "--perm-lex", "100",
        "--config", "1:4", "--format", "json",
    )
    assert rc == 0
    row = json.loads(out)

    from loopnest import LayerParams, perm_of, simulate_fast, two_level, TraceOptions

    stats = simulate_fast(
        LayerParams(4, 3, 6, 5, 2, 2), perm_of(100, "lex"), two_level(1, 4),
        TraceOptions(),
    )
    assert row["cycles"] == stats.cycles
    assert row["layer"] == "4x3x6x5x2x2"
    assert row["perm_lex"] == 100


def test_simulate_perm_flags_equivalent(capsys):
    base = ["simulate", "--layer", "2,2,3,3,2,2", "--config", "1:4",
            "--format", "json"]
    _, by_name, _ = run(capsys, *base, "--perm", "o,i,y,x,ky,kx")
    _, by_lex, _ = run(capsys, *base, "--perm-lex", "0")
    _, by_ham, _ = run(capsys, *base, "--perm-ham", "0")
    assert json.loads(by_name) == json.loads(by_lex) == json.loads(by_ham)


def test_simulate_ipc_out(tmp_path, capsys):
    out = str(tmp_path / "ipc.csv")
    rc, _, _ = run(
        capsys, "simulate", "--layer", "4,4,6,6,2,2", "--perm-lex", "0",
        "--config", "1:4", "--window", "1000", "--ipc-out", out,
    )
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert rows and set(rows[0]) == {"instr", "ipc"}
    assert all(0 < float(r["ipc"]) <= 1 for r in rows)


def test_emit_c_directory_and_stdout(tmp_path, capsys):
    rc, out, _ = run(
        capsys, "emit-c", "--layer", "4,3,6,5,3,2", "--perm-lex", "41",
        "--out", str(tmp_path),
    )
    assert rc == 0
    path = tmp_path / "4x3x6x5x3x2_lex041.c"
    assert path.exists() and str(path) in out

    rc, text, _ = run(
        capsys, "emit-c", "--layer", "4,3,6,5,3,2", "--perm-lex", "41",
        "--threads", "4", "--out", "-",
    )
    assert rc == 0
    assert "#pragma omp parallel for" in text and text.count("{") == text.count("}")


def test_sweep_then_rank_round_trip(tmp_path, capsys):
    out = small_sweep(tmp_path, capsys)
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 3
    assert os.path.exists(out + ".meta.json")

    rc, text, _ = run(capsys, "analyze", "rank", "--results", out,
                      "--format", "json")
    assert rc == 0
    ranked = json.loads(text)
    assert ranked[0]["rank"] == 1 and ranked[0]["mean_speedup"] == 1.0
    assert len(ranked) == 3


def test_sweep_preset_sampled(tmp_path, capsys):
    out = str(tmp_path / "sq.csv")
    rc, _, err = run(
        capsys, "sweep", "--preset", "squeezenet", "--perms", "sample:4",
        "--configs", "1:4", "--threads", "1", "--limit", "20000",
        "--out", out,
    )
    assert rc == 0 and "points" in err
    rows = list(csv.DictReader(open(out)))
    layers = {r["layer"] for r in rows}
    assert len(rows) == 4 * len(layers)


def test_sweep_rejects_conflicting_sources(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--preset", "squeezenet",
              "--layers-file", write_layers(tmp_path),
              "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2


def test_tile_sweep(tmp_path, capsys):
    out = str(tmp_path / "tiles.csv")
    rc, _, _ = run(
        capsys, "tile-sweep", "--layer", "8,8,8,8,3,3", "--perm-lex", "0",
        "--total-tiles", "4", "--limit", "50000", "--out", out,
    )
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 3
    assert [int(r["compute_tiles"]) for r in rows] == [1, 2, 3]
    assert [int(r["threads"]) for r in rows] == [8, 16, 24]


def test_validate_reports_all_matching(capsys):
    rc, out, _ = run(capsys, "validate", "--max-extent", "2", "--layers", "2")
    assert rc == 0
    assert "720/720 permutations match oracle" in out


def test_analyze_sample_size_formula(capsys):
    rc, out, _ = run(capsys, "analyze", "sample-size", "--g", "80/720",
                     "--confidence", "0.683", "--format", "json")
    assert rc == 0
    info = json.loads(out)
    assert info["m"] == 10
    rc, out, _ = run(capsys, "analyze", "sample-size", "--g", "0.5",
                     "--confidence", "0.75", "--mc", "--trials", "2000",
                     "--format", "json")
    info = json.loads(out)
    assert info["m"] == 2 and "mc_rate" in info and info["mc_se"] > 0


def test_analyze_sample_size_from_results(tmp_path, capsys):
    out = small_sweep(tmp_path, capsys)
    rc, text, _ = run(capsys, "analyze", "sample-size", "--results", out,
                      "--good", "0.5", "--format", "json")
    assert rc == 0
    info = json.loads(text)
    assert info["n_perms"] == 3 and info["good_count"] >= 1


def test_analyze_pairs(tmp_path, capsys):
    out = small_sweep(tmp_path, capsys)
    rc, text, _ = run(capsys, "analyze", "pairs", "--results", out, "--k", "2",
                      "--top", "2", "--format", "json")
    assert rc == 0
    combos = json.loads(text)
    assert len(combos) == 2
    assert combos[0]["perms_lex"].count(";") == 1  # pair encoded "a;b"
    assert float(combos[0]["mean_speedup"]) >= float(combos[1]["mean_speedup"])


def test_analyze_stability_and_plot_script(tmp_path, capsys):
    out = str(tmp_path / "two.csv")
    rc, _, err = run(
        capsys, "sweep", "--layers-file", write_layers(tmp_path),
        "--perms", "0,1,2", "--configs", "1:4,1:8", "--threads", "1",
        "--out", out,
    )
    assert rc == 0, err
    stab = str(tmp_path / "stab.csv")
    rc, text, _ = run(capsys, "analyze", "stability", "--results", out,
                      "--axis", "config", "--out", stab, "--plot-script",
                      "--format", "json")
    assert rc == 0
    spearman = json.loads(text)
    assert len(spearman) == 1
    assert {spearman[0]["group_a"], spearman[0]["group_b"]} == {"1:4", "1:8"}
    assert -1 <= float(spearman[0]["spearman"]) <= 1
    assert os.path.exists(stab)
    script = stab + ".plot.py"
    assert os.path.exists(script)
    compile(open(script).read(), script, "exec")


def test_analyze_reuse(tmp_path, capsys):
    out = str(tmp_path / "reuse.csv")
    rc, _, err = run(
        capsys, "analyze", "reuse", "--layer", "4,4,6,6,2,2",
        "--perm-lex", "0", "--limit", "3000", "--window", "500",
        "--out", out, "--plot-script",
    )
    assert rc == 0, err
    rows = list(csv.DictReader(open(out)))
    assert rows and set(rows[0]) == {"seq", "word_rank", "block_rank"}
    assert os.path.exists(out + ".plot.py")


def test_analyze_ipc(tmp_path, capsys):
    out = str(tmp_path / "ipc.csv")
    rc, _, _ = run(
        capsys, "analyze", "ipc", "--layer", "4,4,6,6,2,2", "--perm-lex", "10",
        "--config", "1:4", "--window", "2000", "--out", out, "--plot-script",
    )
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert rows and all(0 < float(r["ipc"]) <= 1 for r in rows)
    assert os.path.exists(out + ".plot.py")


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--layer", "2,2,3,3,2,2", "--perm-lex", "1",
              "--perm-ham", "1"])
    assert exc.value.code == 2

    rc, _, err = run(capsys, "analyze", "rank", "--results",
                     str(tmp_path / "missing.csv"))
    assert rc == 1 and "error:" in err

    rc, _, err = run(capsys, "simulate", "--layer", "2,2,3,3,2,2",
                     "--perm-lex", "0", "--config", "nonsense")
    assert rc == 1 and "error:" in err

    rc, _, err = run(capsys, "simulate", "--layer", "2,2,3,3,2,2",
                     "--perm-lex", "720")
    assert rc == 1

    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--layer", "0,2,3,3,2,2", "--perm-lex", "0"])
    assert exc.value.code == 2  # layer validation happens at parse time


def test_seed_changes_random_policy_runs(capsys):
    # L2 small enough that random replacement actually evicts
    base = ["simulate", "--layer", "8,8,12,12,3,3", "--config", "1:2",
            "--perm-lex", "300", "--format", "json"]
    _, a, _ = run(capsys, *base, "--seed", "1")
    _, b, _ = run(capsys, *base, "--seed", "1")
    _, c, _ = run(capsys, *base, "--seed", "9")
    assert json.loads(a) == json.loads(b)
    assert json.loads(a)["cycles"] != json.loads(c)["cycles"]


def test_results_foreign_csv_rejected(tmp_path, capsys):
    bad = tmp_path / "foreign.csv"
    bad.write_text("a,b\n1,2\n")
    rc, _, err = run(capsys, "analyze", "rank", "--results", str(bad))
    assert rc == 1 and "error:" in err
