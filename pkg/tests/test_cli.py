import csv
import json

import numpy as np
import pytest

from sourcefilter import cli, spectral
from sourcefilter.config import load_config
from sourcefilter.signal import PoissonPath, functional_series, make_signal_path

SMALL = """seed = 0
n_obs = 300
M_particles = 50
rolling_estimate_start = 250
rolling_estimate_stride = 25
diag_slln_n = 3000
diag_n_mc = 5000
profile_every = 100
"""

HEADERS = {
    "observations.csv": ["i", "t", "y", "s_true"],
    "jumps.csv": ["jump_index", "jump_time"],
    "estimate_trace.csv": ["k", "beta_hat", "lambda_hat", "residual_norm", "converged"],
    "fig1_data.csv": ["k", "beta_hat", "lambda_hat"],
    "filter_track.csv": ["j", "t", "posterior_mean", "ess", "log_norm_const"],
    "filter_profile.csv": ["j", "x", "posterior_concentration"],
    "fig2_data.csv": ["t", "y_scaled", "s_true", "posterior_mean"],
}


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("e2e")
    cfg = _write(tmp, SMALL)
    assert cli.main(["e2e", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp / "out"


@pytest.mark.parametrize("name", sorted(HEADERS))
def test_csv_headers_and_widths(run_dir, name):
    rows = _rows(run_dir / name)
    assert rows[0] == HEADERS[name]
    assert len(rows) > 1 and all(len(r) == len(HEADERS[name]) for r in rows)


def test_row_counts(run_dir):
    assert len(_rows(run_dir / "observations.csv")) == 301
    assert len(_rows(run_dir / "filter_track.csv")) == 301
    assert len(_rows(run_dir / "fig2_data.csv")) == 301
    assert [r[0] for r in _rows(run_dir / "estimate_trace.csv")[1:]] == ["250", "275", "300"]
    assert len(_rows(run_dir / "filter_profile.csv")) == 1 + 3 * 101


def test_truth_column_matches_jump_file(run_dir):
    cfg = load_config("paper_sec4.cfg").model
    jumps = np.array([float(r[1]) for r in _rows(run_dir / "jumps.csv")[1:]])
    obs = _rows(run_dir / "observations.csv")[1:]
    times = np.array([float(r[1]) for r in obs])
    basis = spectral.build_basis(cfg.a, cfg.b, cfg.J)
    sp = make_signal_path(cfg, PoissonPath(cfg.lam, times[-1], jumps), basis)
    truth = functional_series(sp, times, cfg.phi0)
    assert np.allclose([float(r[3]) for r in obs], truth, rtol=1e-12, atol=1e-14)


def test_fig2_rescales_observations(run_dir):
    y = np.array([float(r[2]) for r in _rows(run_dir / "observations.csv")[1:]])
    fig = _rows(run_dir / "fig2_data.csv")[1:]
    assert np.allclose([float(r[1]) for r in fig], y / 3.0, rtol=1e-15)
    track = [r[2] for r in _rows(run_dir / "filter_track.csv")[1:]]
    assert [r[3] for r in fig] == track


def test_estimate_json_is_last_trace_row(run_dir):
    est = json.loads((run_dir / "estimate.json").read_text())
    last = _rows(run_dir / "estimate_trace.csv")[-1]
    assert est["converged"] and est["n"] == 300
    assert (est["beta_hat"], est["lambda_hat"]) == (float(last[1]), float(last[2]))


def test_diagnostics_records(run_dir):
    recs = [json.loads(l) for l in (run_dir / "diagnostics.jsonl").read_text().splitlines()]
    names = [r["name"] for r in recs]
    assert names == ["slln", "char_function_t1", "char_function_t3", "campbell", "time_reversal",
                     "time_reversal_mismatch", "signal_coupling_trend", "time_avg_filter_error"]
    for r in recs:
        assert {"name", "statistic", "tolerance", "pass", "seeds"} <= set(r)
    assert not recs[names.index("time_reversal_mismatch")]["pass"]


def test_workers_do_not_change_outputs(tmp_path, run_dir):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["e2e", "--config", cfg, "--out", str(tmp_path / "w3"), "--workers", "3"]) == 0
    for name in list(HEADERS) + ["estimate.json", "diagnostics.jsonl"]:
        assert (tmp_path / "w3" / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_single_particle_filter(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("M_particles = 50", "M_particles = 1")
                 + "filter_theta = true\n")
    out = str(tmp_path / "one")
    assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
    assert cli.main(["filter", "--config", cfg, "--out", out]) == 0
    rows = _rows(tmp_path / "one" / "filter_track.csv")[1:]
    assert all(float(r[3]) == 1.0 for r in rows)


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "seed = 1\nbeta = 1.5\n")
    assert cli.main(["simulate", "--config", cfg]) == cli.EXIT_CONFIG
    assert "beta must lie in (0,1)" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "absent.cfg")]) == cli.EXIT_CONFIG
    assert cli.main(["simulate", "--config", "paper_sec4.cfg", "--seed", "-1"]) == cli.EXIT_CONFIG


def test_missing_observations_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["filter", "--config", cfg, "--out", str(tmp_path / "empty")]) == cli.EXIT_IO
    assert "observations.csv" in capsys.readouterr().err


def test_nonconvergence_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "seed = 0\nn_obs = 40\nrolling_estimate_start = 40\n")
    out = str(tmp_path / "short")
    assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
    assert cli.main(["estimate", "--config", cfg, "--out", out]) == cli.EXIT_NONCONVERGENCE
    assert "did not converge" in capsys.readouterr().err
    assert json.loads((tmp_path / "short" / "estimate.json").read_text())["converged"] is False


def test_seed_override_changes_the_path(tmp_path):
    cfg = _write(tmp_path, SMALL)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "7"])
    assert (tmp_path / "a" / "jumps.csv").read_bytes() != (tmp_path / "b" / "jumps.csv").read_bytes()
