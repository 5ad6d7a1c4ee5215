import json

import numpy as np

from kamtori import cli
from kamtori import fourier as fr


def run_cli(args):
    return cli.main(args)


def test_cfrac_golden_fibonacci(capsys):
    code = run_cli(["cfrac", "--alpha", "golden", "--depth", "10"])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "k,a_k,q_k,selected_flag,Qbar_flag"
    qs = [int(line.split(",")[2]) for line in out[1:]]
    fib = [1, 1]
    while len(fib) < len(qs):
        fib.append(fib[-1] + fib[-2])
    assert qs == fib[: len(qs)]
    a_col = [int(line.split(",")[1]) for line in out[2:]]
    assert all(a == 1 for a in a_col)


def test_cfrac_with_bridges(capsys):
    code = run_cli(["cfrac", "--alpha", "golden", "--depth", "40",
                    "--bridges", "2"])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    selected = [int(line.split(",")[3]) for line in out[1:]]
    assert sum(selected) >= 3


def test_unknown_config_key(tmp_path, capsys):
    cfgfile = tmp_path / "bad.json"
    cfgfile.write_text(json.dumps({"nope.key": 1}))
    code = run_cli(["kam-run", "--config", str(cfgfile),
                    "--out", str(tmp_path)])
    assert code == 2
    assert "nope.key" in capsys.readouterr().err


def test_bad_config_value(tmp_path, capsys):
    cfgfile = tmp_path / "bad.json"
    cfgfile.write_text(json.dumps({"lambda.grid_points": "many"}))
    code = run_cli(["kam-run", "--config", str(cfgfile),
                    "--out", str(tmp_path)])
    assert code == 2
    assert "lambda.grid_points" in capsys.readouterr().err


def test_verify_weights_suite(capsys):
    code = run_cli(["verify", "--suite", "weights"])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "family,param,check,worst_margin,pass"
    assert len(out) == 9  # header + 8 rows
    assert all(line.endswith(",pass") for line in out[1:])
    assert any(line.startswith("gevrey,0.5,") for line in out[1:])


def test_verify_unknown_suite(capsys):
    assert run_cli(["verify", "--suite", "nope"]) == 2


TINY = {
    "lambda.grid_points": 17,
    "run.n_max": 2,
    "alpha.depth": 60,
    "jet.d_max": 4,
    "model.eps": 1e-8,
}


def test_kam_run_outputs(tmp_path):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps(TINY))
    out = tmp_path / "out"
    code = run_cli(["kam-run", "--config", str(cfgfile), "--out", str(out)])
    assert code == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == ("level,r_n,eps_target,U_norm,W_norm,residual,"
                          "excluded_measure")
    assert len(summary) == 4  # header + levels 0..2
    assert (out / "exclusions.csv").exists()
    assert (out / "timings.csv").exists()
    assert (out / "certification.csv").exists()
    assert (out / "torus_K.csv").exists()
    assert (out / "level0_U0.dump").exists()
    # dump roundtrip on one exported series
    grid = np.linspace(0.25, 0.75, TINY["lambda.grid_points"])
    u0 = fr.read_coeff_dump(out / "level0_U0.dump", grid)
    assert not u0.is_zero()


def test_kam_run_determinism_across_jobs(tmp_path):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps(TINY))
    outs = []
    for jobs, name in ((1, "a"), (8, "b")):
        out = tmp_path / name
        code = run_cli(["--jobs", str(jobs), "kam-run", "--config",
                        str(cfgfile), "--out", str(out)])
        assert code == 0
        outs.append((out / "summary.csv").read_bytes())
    assert outs[0] == outs[1]


def test_solve_homological_cli(tmp_path, capsys):
    grid = np.linspace(0.25, 0.75, 17)
    u = fr.from_modes(grid, fr.SCALAR, {1: 1e-9, -1: 1e-9})
    dump = tmp_path / "u.dump"
    fr.write_coeff_dump(dump, u)
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"lambda.grid_points": 17}))
    out = tmp_path / "delta.dump"
    code = run_cli(["solve-homological", "--input", str(dump), "--l", "1",
                    "--K", "8", "--gamma", "0.05", "--tau", "2.0",
                    "--config", str(cfgfile), "--out", str(out)])
    assert code == 0
    assert out.exists()
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].startswith("check,")


def test_norms_cli(tmp_path, capsys):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"lambda.grid_points": 9}))
    code = run_cli(["norms", "--config", str(cfgfile),
                    "--widths", "0.5,0.1"])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "series,r,norm_r,analytic_norm"
    assert len(out) == 5  # U and W at two widths


def test_measure_cli(tmp_path, capsys):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps(TINY))
    code = run_cli(["measure", "--config", str(cfgfile)])
    assert code == 0
    out = capsys.readouterr().out
    assert "total excluded" in out


def test_exhaustion_exit_code(tmp_path, capsys):
    cfg = dict(TINY)
    cfg["schedule.gamma"] = 3.5    # zones swallow the whole interval
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps(cfg))
    code = run_cli(["kam-run", "--config", str(cfgfile),
                    "--out", str(tmp_path / "o")])
    assert code == 1
    assert "exhausted" in capsys.readouterr().err
