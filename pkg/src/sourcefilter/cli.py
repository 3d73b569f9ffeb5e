"""Command-line runner: simulate -> estimate -> filter -> diagnose.

Each stage reads what the previous one wrote into the output directory, so
stages can be rerun individually; ``e2e`` runs all four.  Exit codes: 0
success, 2 configuration error, 3 estimator non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import ergodic, spectral
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ParameterError
from .estimate import MomentModel, estimate_parameters, rolling_estimates, write_trace_csv
from .filtering import run_filter, write_filter_csv, write_profile_csv
from .observe import gen_observations, read_observations_csv, write_observations_csv
from .signal import simulate_signal, write_jumps_csv
from .streams import stream

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_IO = 0, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage, message, code):
        super().__init__(f"{stage}: {message}")
        self.code = code


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _open_out(cfg: ExperimentConfig, name: str):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return open(out / name, "w", newline="", encoding="utf-8")


def _read_obs(cfg: ExperimentConfig):
    path = Path(cfg.output_dir) / "observations.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        return read_observations_csv(fh, cfg.model.delta)


def _basis(cfg: ExperimentConfig):
    m = cfg.model
    return spectral.build_basis(m.a, m.b, m.J)


def cmd_simulate(cfg: ExperimentConfig) -> None:
    """Simulate one signal path and its observations."""
    m = cfg.model
    horizon = cfg.n_obs * m.delta
    sp = simulate_signal(m, horizon, stream(m.seed, "signal"), _basis(cfg))
    obs = gen_observations(sp, m, cfg.n_obs, stream(m.seed, "noise"))
    with _open_out(cfg, "observations.csv") as fh:
        write_observations_csv(obs, fh)
    with _open_out(cfg, "jumps.csv") as fh:
        write_jumps_csv(sp.path, fh)


def cmd_estimate(cfg: ExperimentConfig) -> dict:
    """Rolling moment estimates; the last one is the reported estimate."""
    obs = _read_obs(cfg)
    model = MomentModel(cfg.model, _basis(cfg))
    start = min(cfg.rolling_estimate_start, obs.n)
    trace = rolling_estimates(obs, cfg.model, cfg.init, start, cfg.rolling_estimate_stride, model)
    with _open_out(cfg, "estimate_trace.csv") as fh:
        write_trace_csv(trace, fh)
    with _open_out(cfg, "fig1_data.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "beta_hat", "lambda_hat"])
        for k, res in trace:
            w.writerow([k, _fmt(res.beta_hat), _fmt(res.lambda_hat)])
    final = trace[-1][1]
    summary = {"beta_hat": final.beta_hat, "lambda_hat": final.lambda_hat, "n": obs.n,
               "converged": final.converged}
    with _open_out(cfg, "estimate.json") as fh:
        fh.write(json.dumps(summary) + "\n")
    print(json.dumps(summary))
    if not final.converged:
        raise StageError("estimate", f"moment equations did not converge "
                         f"(residual {final.residual_norm:.3g})", EXIT_NONCONVERGENCE)
    return summary


def _filter_theta(cfg: ExperimentConfig):
    if cfg.filter_theta == "true":
        return cfg.model.theta
    with open(Path(cfg.output_dir) / "estimate.json", encoding="utf-8") as fh:
        est = json.load(fh)
    return (float(est["beta_hat"]), float(est["lambda_hat"]))


def cmd_filter(cfg: ExperimentConfig) -> None:
    obs = _read_obs(cfg)
    m = cfg.model
    out = run_filter(obs, m, _filter_theta(cfg), cfg.M_particles, cfg.resample_policy,
                     seed=m.seed, refresh_every=cfg.refresh_every, refresh_init=cfg.init,
                     refresh_start=cfg.n_obs if cfg.refresh_every else 0,
                     profile_every=cfg.profile_every, basis=_basis(cfg))
    with _open_out(cfg, "filter_track.csv") as fh:
        write_filter_csv(out, fh)
    if cfg.profile_every:
        with _open_out(cfg, "filter_profile.csv") as fh:
            write_profile_csv(out, fh)
    truth = obs.truth_s if obs.truth_s is not None else np.full(obs.n, np.nan)
    with _open_out(cfg, "fig2_data.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y_scaled", "s_true", "posterior_mean"])
        y_scaled = obs.y / m.h.kappa if m.h.kappa else obs.y
        for row in zip(out.t, y_scaled, truth, out.posterior_mean):
            w.writerow([_fmt(v) for v in row])


def _read_track(cfg: ExperimentConfig) -> np.ndarray:
    with open(Path(cfg.output_dir) / "filter_track.csv", newline="", encoding="utf-8") as fh:
        return np.array([float(r["posterior_mean"]) for r in csv.DictReader(fh)])


def cmd_diagnose(cfg: ExperimentConfig) -> list:
    m, seed, workers = cfg.model, cfg.model.seed, cfg.workers
    basis = _basis(cfg)
    flags = cfg.diagnostics
    reports = []
    long_obs = None
    if flags["slln"] or flags["coupling"]:
        n = cfg.diag_slln_n
        sp = simulate_signal(m, n * m.delta, stream(seed, "diag-signal"), basis)
        long_obs = gen_observations(sp, m, n, stream(seed, "diag-noise"))
    if flags["slln"]:
        reports.append(ergodic.slln_check(long_obs, m.theta, m, MomentModel(m, basis), [seed]))
    if flags["char_function"]:
        f = ergodic.smooth_bump(m.n_grid)
        for i, t in enumerate((1.0, 3.0)):
            reports.append(ergodic.char_function_check(m, f, t, (0.5, 1.0, 2.0), cfg.diag_n_mc,
                                                       seed + i, basis, workers))
    if flags["campbell"]:
        thetas = [(0.3, 5.0), (0.45, 20.0), (0.6, 10.0), (0.8, 30.0), (0.95, 2.0)]
        thetas = [(b, min(l, m.M_bound)) for b, l in thetas]
        reports.append(ergodic.campbell_check(m, thetas, cfg.diag_n_mc, seed, basis, workers))
    if flags["time_reversal"]:
        reports.append(ergodic.time_reversal_check(m, 2.0, cfg.diag_n_mc, seed, None, basis,
                                                   workers))
        if m.lam > 0:
            reports.append(ergodic.time_reversal_check(m, 2.0, cfg.diag_n_mc, seed, 1.5 * m.lam,
                                                       basis, workers))
    if flags["coupling"]:
        model = MomentModel(m, basis)
        sizes = [k for k in (200, 550, 2000) if k <= long_obs.n] or [long_obs.n]
        hats = [estimate_parameters(long_obs.head(k), m, cfg.init, model).theta for k in sizes]
        reports.append(ergodic.coupling_trend(hats, m.theta, m, 1.0, cfg.diag_n_mc, seed, basis,
                                              workers))
    if flags["filter_error"] and (Path(cfg.output_dir) / "filter_track.csv").exists():
        obs = _read_obs(cfg)
        plug_in = _read_track(cfg)
        ref = run_filter(obs, m, m.theta, cfg.M_particles, cfg.resample_policy,
                         seed=seed + 1, basis=basis)
        err = float(np.mean((plug_in - ref.posterior_mean) ** 2))
        reports.append(ergodic.DiagnosticsReport("time_avg_filter_error", {"error": err}, None,
                                                 True, [seed, seed + 1],
                                                 {"M": cfg.M_particles, "k": obs.n}))
    with _open_out(cfg, "diagnostics.jsonl") as fh:
        ergodic.write_reports_jsonl(reports, fh)
    return reports


def cmd_e2e(cfg: ExperimentConfig) -> None:
    _run_stage("simulate", cmd_simulate, cfg)
    _run_stage("estimate", cmd_estimate, cfg)
    _run_stage("filter", cmd_filter, cfg)
    _run_stage("diagnose", cmd_diagnose, cfg)


def _run_stage(stage, fn, cfg):
    try:
        return fn(cfg)
    except StageError:
        raise
    except ConfigError as exc:
        raise StageError(stage, str(exc), EXIT_CONFIG) from exc
    except OSError as exc:
        raise StageError(stage, f"I/O error: {exc}", EXIT_IO) from exc
    except ParameterError as exc:
        raise StageError(stage, str(exc), EXIT_CONFIG) from exc


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "filter": cmd_filter,
            "diagnose": cmd_diagnose, "e2e": cmd_e2e}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sourcefilter",
                                     description="Poisson source SPDE: simulate, estimate, filter.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file, or the bundled name paper_sec4.cfg")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("--workers", type=int, help="threads for Monte Carlo diagnostics")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).replace(seed=args.seed, output_dir=args.out,
                                               workers=args.workers)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "e2e":
            cmd_e2e(cfg)
        else:
            _run_stage(args.command, COMMANDS[args.command], cfg)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
