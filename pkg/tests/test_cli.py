import csv
import math
from pathlib import Path

import numpy as np
import pytest

from airyrelax import cli
from airyrelax.grid import Grid2D, read_field_csv
from airyrelax.solver import SWEEP_HEADER, read_sweep_csv

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_cfg(tmp_path, body, name="p.cfg"):
    p = tmp_path / name
    p.write_text(body)
    return p


POINT_CFG = """\
[domain]
grid = 8

[load]
kind = point
points = 0 0; 0.5 0; 1 0
forces = 0 1; 0 -2; 0 1

[sweep]
lambdas = 10, 100
"""


def test_verify_passes(capsys):
    assert cli.run(["verify"]) == 0
    out = capsys.readouterr().out
    assert "0 failed" in out and "FAIL" not in out


@pytest.mark.parametrize("argv", [["bogus"], ["sweep", "--nope"], [], ["solve"], ["envelope", "--grid", "x"]])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.run(argv) == 1
    assert capsys.readouterr().err


def test_bending_sweep_gap_shrinks(tmp_path):
    out = tmp_path / "b"
    assert cli.run(["sweep", "--config", str(PROBLEMS / "bending.cfg"), "--grid", "16", "--out", str(out)]) == 0
    assert rows(out / "sweep.csv")[0] == SWEEP_HEADER
    back = read_sweep_csv(out / "sweep.csv")
    gaps = [abs(r.gap) for r in back]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    for r in back:
        assert r.gap == pytest.approx(-2.0 / math.sqrt(r.lam), rel=1e-9)
    g, nodes = read_field_csv(out / "field_lambda_inf.csv")
    assert g == Grid2D.rectangle(16) and nodes.shape == (17, 17)
    assert (out / "field_lambda_10.csv").exists()


def test_sweep_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, POINT_CFG)
    texts = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        argv = ["sweep", "--config", str(cfg), "--out", str(out), "--threads", "1", "--seed", "5", "--no-timing"]
        assert cli.run(argv) == 0
        texts.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert texts[0] == texts[1]
    assert len(texts[0]) == 4


def test_solve_limit_and_finite(tmp_path):
    cfg = write_cfg(tmp_path, POINT_CFG)
    out = tmp_path / "s"
    assert cli.run(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.run(["solve", "--config", str(cfg), "--out", str(out), "--lambda", "100"]) == 0
    rep_inf = rows(out / "report_lambda_inf.csv")
    rep_100 = rows(out / "report_lambda_100.csv")
    assert rep_inf[0] == ["lambda", "energy", "initial_energy", "iters", "high_branch_frac", "converged"]
    assert float(rep_100[1][1]) <= float(rep_100[1][2])
    # finite-lambda energy sits below the limit energy
    assert float(rep_100[1][1]) < float(rep_inf[1][1])
    s1 = np.loadtxt(out / "stress_lambda_100_sigma1.csv", delimiter=",")
    s2 = np.loadtxt(out / "stress_lambda_100_sigma2.csv", delimiter=",")
    assert s1.shape == s2.shape == (9, 9) and np.all(s1 >= s2)
    g, nodes = read_field_csv(out / "field_lambda_100.csv")
    assert nodes.shape == g.shape


def test_solve_bad_lambda(tmp_path):
    cfg = write_cfg(tmp_path, POINT_CFG)
    assert cli.run(["solve", "--config", str(cfg), "--lambda", "-3"]) == 1
    assert cli.run(["solve", "--config", str(cfg), "--lambda", "abc"]) == 1


def test_nonconvergence_exit_2(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, POINT_CFG)
    real = cli.minimize_finite_lambda

    def failing(*a, **kw):
        u, rep = real(*a, **kw)
        rep.converged = False
        rep.message = "line search failed"
        return u, rep

    monkeypatch.setattr(cli, "minimize_finite_lambda", failing)
    assert cli.run(["solve", "--config", str(cfg), "--lambda", "10", "--out", str(tmp_path / "o")]) == 2


def test_boundary_three_point(tmp_path):
    out = tmp_path / "tp"
    assert cli.run(["boundary", "--config", str(PROBLEMS / "three_point.cfg"), "--grid", "8", "--out", str(out)]) == 0
    r = rows(out / "boundary.csv")
    assert r[0] == ["vertex", "arclength", "f1", "f2"]
    data = np.array(r[1:], dtype=float)
    g = Grid2D.rectangle(8)
    assert data.shape == (g.n_ring, 4)
    assert np.array_equal(data[:, 0], np.arange(g.n_ring))
    # tent on the bottom edge, zero elsewhere
    x = g.ring_points()[:, 0]
    bottom = slice(0, g.nx)
    assert np.allclose(data[bottom, 2], 0.5 - np.abs(x[bottom] - 0.5))
    assert np.allclose(data[g.nx :, 2], 0.0) and np.allclose(data[:, 3], 0.0)


def test_boundary_unbalanced_names_integral(tmp_path, capsys):
    cfg = write_cfg(tmp_path, POINT_CFG.replace("forces = 0 1; 0 -2; 0 1", "forces = 0 1; 0 -1; 0 1"))
    assert cli.run(["boundary", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "resultant force" in capsys.readouterr().err
    cfg = write_cfg(tmp_path, POINT_CFG.replace("forces = 0 1; 0 -2; 0 1", "forces = 0 1; 0 0; 0 -1"))
    assert cli.run(["boundary", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "resultant moment" in capsys.readouterr().err


def test_sampled_and_uniform_loads_agree(tmp_path):
    g = Grid2D.rectangle(8)
    sigma = np.array([[0.3, -0.2], [-0.2, 1.1]])
    np.savetxt(tmp_path / "t.csv", g.ring_normals() @ sigma, delimiter=",", header="g1,g2")
    base = "[domain]\ngrid = 8\n[load]\n"
    c1 = write_cfg(tmp_path, base + "kind = sampled\ntraction_file = t.csv\n", "s.cfg")
    c2 = write_cfg(tmp_path, base + "kind = uniform_stress\nstress = 0.3, -0.2, 1.1\n", "u.cfg")
    assert cli.run(["boundary", "--config", str(c1), "--out", str(tmp_path / "s")]) == 0
    assert cli.run(["boundary", "--config", str(c2), "--out", str(tmp_path / "u")]) == 0
    a = np.array(rows(tmp_path / "s" / "boundary.csv")[1:], dtype=float)
    b = np.array(rows(tmp_path / "u" / "boundary.csv")[1:], dtype=float)
    assert np.allclose(a, b, atol=1e-12)
    # the sampled table is tied to one grid
    assert cli.run(["boundary", "--config", str(c1), "--grid", "10", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize(
    "old, new, line, needle",
    [
        ("grid = 8", "grid = eight", 2, "[domain] grid"),
        ("kind = point", "kind = springs", 5, "[load] kind"),
        ("lambdas = 10, 100", "lambdas = 100, 10", 10, "strictly increasing"),
        ("forces = 0 1; 0 -2; 0 1", "forces = 0 1; 0 -2", 7, "2 forces for 3 points"),
        ("points = 0 0; 0.5 0; 1 0", "points = 0 0 1; 0.5 0; 1 0", 6, "pairs"),
        ("[sweep]\nlambdas = 10, 100", "[sweep]\n# comment\nlambdas = 100, 10", 11, "strictly increasing"),
    ],
)
def test_config_errors_are_line_precise(tmp_path, capsys, old, new, line, needle):
    cfg = write_cfg(tmp_path, POINT_CFG.replace(old, new))
    assert cli.run(["boundary", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert f"{cfg}:{line}:" in err and needle in err


def test_spaced_separators_and_comments(tmp_path):
    body = POINT_CFG.replace("points = 0 0; 0.5 0; 1 0", "points = 0 0 ; 0.5 0 ; 1 0  # on the bottom edge")
    cfg = cli.ProblemConfig.load(write_cfg(tmp_path, body))
    assert cfg.points.tolist() == [[0, 0], [0.5, 0], [1, 0]]


def test_config_structural_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path, POINT_CFG + "\n[extra]\nx = 1\n")
    assert cli.run(["boundary", "--config", str(cfg)]) == 1
    assert "unknown section [extra]" in capsys.readouterr().err
    cfg = write_cfg(tmp_path, "[domain]\ngrid = 8\n")
    assert cli.run(["boundary", "--config", str(cfg)]) == 1
    assert "missing required key 'kind'" in capsys.readouterr().err
    assert cli.run(["boundary", "--config", str(tmp_path / "none.cfg")]) == 1
    cfg = write_cfg(tmp_path, POINT_CFG + "[solver]\nschedule = 1e-2, 1e-1\n")
    assert cli.run(["boundary", "--config", str(cfg)]) == 1
    assert "decreasing" in capsys.readouterr().err


def test_shipped_configs_load():
    for name in ("bending.cfg", "three_point.cfg"):
        cfg = cli.ProblemConfig.load(PROBLEMS / name)
        assert cfg.cells == 64 and cfg.lambdas == [10.0, 100.0, 1000.0, 10000.0]
        assert cfg.solver.limit_method == "socp"


def test_envelope_table(tmp_path):
    out = tmp_path / "e"
    assert cli.run(["envelope", "--lambda", "4", "--grid", "3", "--out", str(out)]) == 0
    r = rows(out / "envelope.csv")
    assert r[0] == cli.ENVELOPE_HEADER
    vals = np.array(r[1:], dtype=float)
    assert vals.shape == (9, 9)
    f, qc, r1, r2 = vals[:, 4], vals[:, 5], vals[:, 6], vals[:, 7]
    assert np.all(r1 <= f) and np.all(r2 <= r1)
    assert np.all(r2 >= qc * (1 - 1e-5))
    assert np.all(np.abs(vals[:, 8]) <= 1e-2)


def test_laminate_profile(tmp_path):
    out = tmp_path / "l"
    argv = ["laminate", "--kind", "profile", "--alpha", "2", "--beta", "-1", "--t", "0.25", "--k", "4", "--grid", "512"]
    assert cli.run(argv + ["--out", str(out)]) == 0
    prof = np.loadtxt(out / "laminate_profile.csv", delimiter=",", skiprows=1)
    assert prof.shape == (512, 4)
    hist = np.loadtxt(out / "laminate_hist.csv", delimiter=",", skiprows=1)
    assert set(hist[:, 0]) == {-1.0, 2.0}
    assert hist[:, 1].sum() == 512
    assert cli.run(argv[:-2] + ["--grid", "8", "--out", str(out)]) == 1


def test_laminate_two_level(tmp_path, capsys):
    out = tmp_path / "l2"
    argv = ["laminate", "--grid", "64", "--k", "8", "--k-outer", "2", "--out", str(out)]
    assert cli.run(argv) == 0
    g, nodes = read_field_csv(out / "laminate_field.csv")
    assert nodes.shape == (65, 65)
    hist = rows(out / "laminate_hist.csv")
    assert hist[0] == ["label", "a", "b", "d", "count", "fraction"]
    assert sum(int(h[4]) for h in hist[1:]) == 65 * 65
    assert sum(float(h[5]) for h in hist[1:]) == pytest.approx(1.0)
    assert "mean F" in capsys.readouterr().out
    assert cli.run(["laminate", "--xi", "1,0", "--out", str(out)]) == 1


def test_kernel_benchmark_runs():
    import subprocess
    import sys

    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    out = subprocess.run([sys.executable, str(script), "--sizes", "16", "--repeat", "2"], capture_output=True, text=True, check=True)
    lines = out.stdout.splitlines()
    assert lines[0].split()[:3] == ["kernel", "n", "numpy"]
    assert {l.split()[0] for l in lines[1:]} == {"finite", "limit", "objective"}
