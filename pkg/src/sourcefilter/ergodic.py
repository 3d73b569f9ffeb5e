"""Empirical checks of the limit theorems behind the estimator and filter.

Each check returns a :class:`DiagnosticsReport`; reports serialise to one JSON
object per line.  Monte Carlo replicas are generated in fixed chunks with one
random stream per chunk, so results do not depend on the worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from . import spectral
from .errors import ParameterError
from .estimate import MomentModel
from .filtering import FilterOutput
from .model import ModelConfig
from .observe import ObservationSeries
from .signal import observation_coeffs
from .spectral import TAU_MIN
from .streams import chunked_map, ordered_concat, stream

CHUNK = 4096
KS_LEVEL = 0.01
MIN_KS_SAMPLES = 5000
STATIONARY_HORIZON = 40.0  # in units of 1/alpha


@dataclass
class DiagnosticsReport:
    name: str
    statistic: object
    tolerance: object
    passed: bool
    seeds: list
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        record = {"name": self.name, "statistic": self.statistic,
                  "tolerance": self.tolerance, "pass": bool(self.passed),
                  "seeds": list(self.seeds)}
        if self.details:
            record["details"] = self.details
        return json.dumps(record, default=float)


def write_reports_jsonl(reports, fh) -> None:
    for r in reports:
        fh.write(r.to_json() + "\n")


def smooth_bump(n_grid: int = spectral.DEFAULT_GRID, lo: float = 0.3, hi: float = 0.7,
                width: float = 0.05) -> np.ndarray:
    """Indicator of [lo, hi] smoothed with tanh edges, on the uniform grid."""
    x = spectral.uniform_grid(n_grid)
    return 0.5 * (np.tanh((x - lo) / width) - np.tanh((x - hi) / width))


# ---------------------------------------------------------------- sampling

def _arrivals(rng, rate, horizon, size):
    """Arrival times of ``size`` independent rate-``rate`` Poisson processes
    on (0, horizon], built from exponential gaps.  Returns (rows, times)."""
    if rate <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    mean = rate * horizon
    k = int(mean + 6.0 * np.sqrt(mean) + 10)
    arr = np.cumsum(rng.exponential(1.0 / rate, size=(size, k)), axis=1)
    while np.any(arr[:, -1] <= horizon):
        more = arr[:, -1:] + np.cumsum(rng.exponential(1.0 / rate, size=(size, k)), axis=1)
        arr = np.hstack([arr, more])
    mask = arr <= horizon
    return np.nonzero(mask)[0], arr[mask]


def shot_functional_samples(config: ModelConfig, t: float, coeffs, n: int, seed: int,
                            label: str = "shot", reverse: bool = False,
                            rate: float | None = None, beta: float | None = None,
                            basis: spectral.SpectralBasis | None = None,
                            workers: int = 1) -> np.ndarray:
    """Samples of sum_k e^{-alpha L_k} <P_{L_k}(beta, .), g> over arrivals on (0, t].

    ``coeffs`` are g_j = <psi_j, g>.  Lags are L_k = t - tau_k (forward) or
    tau_k (``reverse``); the initial condition is not included.
    """
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    rate = config.lam if rate is None else rate
    beta = config.beta if beta is None else beta
    rates = config.alpha + basis.sigma
    w = spectral.modes(basis, beta) * np.asarray(coeffs, dtype=float)

    def chunk(i, lo, hi):
        rows, times = _arrivals(stream(seed, label, i), rate, t, hi - lo)
        lags = times if reverse else t - times
        vals = spectral.decayed_sum(rates, np.maximum(lags, TAU_MIN), w)
        return np.bincount(rows, vals, minlength=hi - lo)

    return ordered_concat(chunked_map(chunk, n, CHUNK, workers))


def functional_samples(config: ModelConfig, t: float, f, n: int, seed: int,
                       basis: spectral.SpectralBasis | None = None,
                       workers: int = 1) -> np.ndarray:
    """Samples of <U_t, f> from the config's initial condition."""
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    fj = spectral.project(basis, f)
    u0 = spectral.measure_coeffs(basis, config.u0)
    init = float(np.sum(np.exp(-(config.alpha + basis.sigma) * t) * u0 * fj))
    return init + shot_functional_samples(config, t, fj, n, seed, "field", basis=basis,
                                          workers=workers)


def stationary_samples(config: ModelConfig, theta, n: int, seed: int,
                       basis: spectral.SpectralBasis | None = None,
                       workers: int = 1) -> np.ndarray:
    """Samples of <V_inf, phi0>, truncated at 40/alpha."""
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    obs = observation_coeffs(basis, config.phi0)
    return shot_functional_samples(config, STATIONARY_HORIZON / config.alpha, obs, n, seed,
                                   "stationary", reverse=True, rate=theta[1], beta=theta[0],
                                   basis=basis, workers=workers)


# ---------------------------------------------------------------- checks

def _batch_se(x, batches=50):
    """Batch-means standard error of the mean of a dependent series."""
    m = x.size // batches
    if m < 2:
        return float("nan")
    means = x[:m * batches].reshape(batches, m).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def slln_check(y: ObservationSeries, theta0, config: ModelConfig,
               model: MomentModel | None = None, seeds=()) -> DiagnosticsReport:
    """Compare (1/n) sum Y and (1/n) sum Y^2 with g1 and g2 + 1 at theta0.

    Passes when both deviations are within 4 * (empirical std / sqrt(n)).
    """
    if theta0[1] == 0:
        # no sources: the stationary field is identically zero
        h0 = float(config.h(0.0))
        g1, g2 = h0, h0 * h0
    else:
        model = model or MomentModel(config.with_theta(*theta0))
        g1, g2 = model.g(tuple(theta0))
    yv, n = y.y, y.n
    sq = yv * yv
    dev = (abs(float(yv.mean()) - g1), abs(float(sq.mean()) - (g2 + 1.0)))
    tol = (4.0 * float(yv.std(ddof=1)) / np.sqrt(n) if n > 1 else np.inf,
           4.0 * float(sq.std(ddof=1)) / np.sqrt(n) if n > 1 else np.inf)
    return DiagnosticsReport(
        "slln", {"first_moment_dev": dev[0], "second_moment_dev": dev[1]},
        {"first_moment": tol[0], "second_moment": tol[1]},
        dev[0] <= tol[0] and dev[1] <= tol[1], list(seeds),
        {"n": n, "g1": g1, "g2_plus_1": g2 + 1.0,
         "batch_se_first": _batch_se(yv), "batch_se_second": _batch_se(sq)})


def char_function_empirical(samples, u: float) -> complex:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ParameterError("need at least one sample")
    return complex(np.mean(np.cos(u * x)), np.mean(np.sin(u * x)))


def _breakpoints(t):
    pts = [0.0] + [p for p in (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0) if p < t]
    return pts + [t]


def char_function_theoretical(f, t: float, config: ModelConfig, u: float = 1.0,
                              basis: spectral.SpectralBasis | None = None) -> complex:
    """E exp(i u <U_t, f>) from the Poisson product formula.

    Combines exp(i u e^{-alpha t} <T_t f, U_0>) with
    exp(lam int_0^t (exp(i u e^{-alpha s} T_s f(beta)) - 1) ds).  ``t = inf``
    gives the stationary law: the initial factor is dropped and the integral
    runs to 40/alpha.
    """
    if not t > 0:
        raise ParameterError("t must be positive")
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    fj = spectral.project(basis, f)
    w = spectral.modes(basis, config.beta) * fj
    stationary = np.isinf(t)
    upper = STATIONARY_HORIZON / config.alpha if stationary else float(t)

    def phase(s):
        return u * np.exp(-config.alpha * s) * np.sum(np.exp(-basis.sigma * s) * w)

    log_cf = 0j
    if config.lam > 0:
        pts = _breakpoints(upper)
        re = im = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            re += integrate.quad(lambda s: np.cos(phase(s)) - 1.0, lo, hi,
                                 epsabs=1e-12, epsrel=1e-10, limit=200)[0]
            im += integrate.quad(lambda s: np.sin(phase(s)), lo, hi,
                                 epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        log_cf += config.lam * complex(re, im)
    if not stationary:
        u0 = spectral.measure_coeffs(basis, config.u0)
        init = np.exp(-config.alpha * t) * np.sum(np.exp(-basis.sigma * t) * u0 * fj)
        log_cf += 1j * u * init
    return complex(np.exp(log_cf))


def char_function_check(config: ModelConfig, f, t: float, us, n: int, seed: int,
                        basis: spectral.SpectralBasis | None = None,
                        workers: int = 1) -> DiagnosticsReport:
    """Empirical vs theoretical cf of <U_t, f>; tolerance 4/sqrt(n) + 1e-6."""
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    x = functional_samples(config, t, f, n, seed, basis, workers)
    gaps = [abs(char_function_empirical(x, u) - char_function_theoretical(f, t, config, u, basis))
            for u in us]
    tol = 4.0 / np.sqrt(n) + 1e-6
    return DiagnosticsReport(f"char_function_t{t:g}", {"max_abs_gap": max(gaps)}, tol,
                             max(gaps) <= tol, [seed],
                             {"u": list(us), "gaps": gaps, "n": n})


def campbell_check(config: ModelConfig, thetas, n: int, seed: int,
                   basis: spectral.SpectralBasis | None = None,
                   workers: int = 1) -> DiagnosticsReport:
    """Closed-form (g1, g2) vs Monte Carlo moments of h(V_inf), 4 standard errors."""
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    model = MomentModel(config, basis)
    worst, rows = 0.0, []
    for i, theta in enumerate(thetas):
        hv = config.h(stationary_samples(config, theta, n, seed + i, basis, workers))
        g = model.g(tuple(theta))
        for r, vals in enumerate((hv, hv * hv)):
            se = float(vals.std(ddof=1) / np.sqrt(n))
            z = abs(float(vals.mean()) - g[r]) / se
            worst = max(worst, z)
            rows.append({"theta": list(theta), "moment": r + 1, "closed_form": g[r],
                         "mc": float(vals.mean()), "se": se, "z": z})
    return DiagnosticsReport("campbell", {"max_z": worst}, 4.0, worst <= 4.0,
                             [seed + i for i in range(len(thetas))], {"rows": rows, "n": n})


def ks_critical(n: int, m: int, level: float = KS_LEVEL) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    return float(stats.kstwobign.isf(level) * np.sqrt((n + m) / (n * m)))


def time_reversal_check(config: ModelConfig, t: float, N_mc: int, seed: int,
                        lam_mismatch: float | None = None,
                        basis: spectral.SpectralBasis | None = None,
                        workers: int = 1) -> DiagnosticsReport:
    """KS test that forward and reversed shot sums at x0 share a law.

    ``lam_mismatch`` runs the reversed sample at a different rate (negative
    control).
    """
    if N_mc < MIN_KS_SAMPLES:
        raise ParameterError(f"distribution tests need N_mc >= {MIN_KS_SAMPLES}")
    if not t > 0:
        raise ParameterError("t must be positive")
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    obs = observation_coeffs(basis, config.phi0)
    fwd = shot_functional_samples(config, t, obs, N_mc, seed, "forward", basis=basis,
                                  workers=workers)
    rev_rate = config.lam if lam_mismatch is None else lam_mismatch
    rev = shot_functional_samples(config, t, obs, N_mc, seed, "reverse", reverse=True,
                                  rate=rev_rate, basis=basis, workers=workers)
    crit = ks_critical(N_mc, N_mc)
    d = float(stats.ks_2samp(fwd, rev).statistic)
    name = "time_reversal" if lam_mismatch is None else "time_reversal_mismatch"
    return DiagnosticsReport(name, {"ks": d}, crit, d <= crit, [seed],
                             {"t": t, "N_mc": N_mc, "reverse_rate": rev_rate})


def coupled_gap_samples(theta_hat, theta0, config: ModelConfig, t1: float, N_mc: int,
                        seed: int, basis: spectral.SpectralBasis | None = None,
                        workers: int = 1) -> np.ndarray:
    """Squared gaps <U~_hat, phi0> - <U~_0, phi0> at t1 under a thinning coupling.

    One stream at rate max(lam_hat, lam0) carries uniform marks; a jump
    belongs to the rate-lam process when its mark is below lam / max.  The
    initial conditions coincide and cancel.
    """
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    obs = observation_coeffs(basis, config.phi0)
    rates = config.alpha + basis.sigma
    (bh, lh), (b0, l0) = map(tuple, (theta_hat, theta0))
    top = max(lh, l0)
    src_h = spectral.modes(basis, bh) * obs
    src_0 = spectral.modes(basis, b0) * obs

    def chunk(i, lo, hi):
        rng = stream(seed, "coupling", i)
        rows, times = _arrivals(rng, top, t1, hi - lo)
        marks = rng.random(times.size)
        in_h = (marks * top < lh).astype(float)
        in_0 = (marks * top < l0).astype(float)
        lags = np.maximum(t1 - times, TAU_MIN)
        vh = spectral.decayed_sum(rates, lags, src_h)
        v0 = spectral.decayed_sum(rates, lags, src_0)
        diff = np.bincount(rows, in_h * vh - in_0 * v0, minlength=hi - lo)
        return diff * diff

    return ordered_concat(chunked_map(chunk, N_mc, CHUNK, workers))


def signal_coupling_l2(theta_hat, theta0, config: ModelConfig, t1: float, N_mc: int,
                       seed: int, basis: spectral.SpectralBasis | None = None,
                       workers: int = 1) -> DiagnosticsReport:
    """Monte Carlo L2 gap E|<U~^n_t1, phi0> - <U~_t1, phi0>|^2 for one theta_hat."""
    sq = coupled_gap_samples(theta_hat, theta0, config, t1, N_mc, seed, basis, workers)
    gap = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(N_mc)) if N_mc > 1 else float("nan")
    return DiagnosticsReport("signal_coupling_l2", {"gap": gap, "se": se}, None, True, [seed],
                             {"theta_hat": list(theta_hat), "theta0": list(theta0), "t1": t1})


def coupling_trend(theta_hats, theta0, config: ModelConfig, t1: float, N_mc: int,
                   seed: int, basis: spectral.SpectralBasis | None = None,
                   workers: int = 1) -> DiagnosticsReport:
    """Gaps along a sequence of estimates; passes when each gap is at most the
    previous one plus 4 combined standard errors."""
    reports = [signal_coupling_l2(th, theta0, config, t1, N_mc, seed, basis, workers)
               for th in theta_hats]
    gaps = [r.statistic["gap"] for r in reports]
    ses = [r.statistic["se"] for r in reports]
    ok = all(gaps[i + 1] <= gaps[i] + 4.0 * np.hypot(ses[i], ses[i + 1])
             for i in range(len(gaps) - 1))
    return DiagnosticsReport("signal_coupling_trend", {"gaps": gaps, "se": ses}, "nonincreasing",
                             ok, [seed], {"theta_hats": [list(t) for t in theta_hats]})


def time_avg_filter_error(out_a: FilterOutput, out_b: FilterOutput) -> float:
    """(1/k) sum_j (posterior_mean_a - posterior_mean_b)^2."""
    a, b = np.asarray(out_a.posterior_mean), np.asarray(out_b.posterior_mean)
    if a.shape != b.shape:
        raise ParameterError("filter tracks differ in length")
    return float(np.mean((a - b) ** 2))


def time_avg_track_error(track, truth) -> float:
    track, truth = np.asarray(track, dtype=float), np.asarray(truth, dtype=float)
    if track.shape != truth.shape:
        raise ParameterError("tracks differ in length")
    return float(np.mean((track - truth) ** 2))
