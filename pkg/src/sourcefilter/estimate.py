"""Method-of-moments estimation of the source location and release rate.

The stationary observation moments are

    g1(theta) = E h(V),   g2(theta) = E h(V)^2,

where V = <V_inf, phi0> is the stationary shot noise
``sum_k e^{-alpha tau_k} P_{tau_k}(beta, .)`` over a rate-``lam`` Poisson
process on (0, inf).  For linear ``h(z) = kappa z`` Campbell's formulas give

    g1 = kappa lam S1,   g2 = kappa^2 (lam S2 + lam^2 S1^2)

with ``S1 = sum_j A_j / (alpha + sigma_j)`` and
``S2 = sum_{i,j} A_i A_j / (2 alpha + sigma_i + sigma_j)``, ``A_j = psi_j(beta) phi_j``.
For a point functional both sums are evaluated through the closed-form
resolvent (S2 row by row), so they carry no truncation error in the inner
index.  Other links fall back to Monte Carlo with common random numbers.

The estimate solves ``m1 = g1(theta)``, ``m2 = g2(theta) + 1`` by damped,
box-projected Newton iterations with a grid multistart.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import DomainError, ParameterError
from .model import ModelConfig
from .observe import ObservationSeries
from .signal import observation_coeffs
from .streams import stream

BOX_EPS = 1e-6
RESIDUAL_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 10
DET_TOL = 1e-12
FD_STEP = 1e-4


@dataclass(frozen=True)
class MomentTargets:
    m1: float
    m2: float
    n: int


@dataclass
class EstimationResult:
    beta_hat: float
    lambda_hat: float
    iterations: int
    residual_norm: float
    converged: bool
    jacobian_cond: float
    trace: list = field(default_factory=list)  # (beta, lambda, residual_norm) per iterate

    @property
    def theta(self) -> tuple[float, float]:
        return (self.beta_hat, self.lambda_hat)


def sample_moments(obs: ObservationSeries | np.ndarray) -> MomentTargets:
    y = obs.y if isinstance(obs, ObservationSeries) else np.asarray(obs, dtype=float)
    if y.size == 0:
        raise ParameterError("cannot take moments of an empty series")
    return MomentTargets(float(np.mean(y)), float(np.mean(y * y)), int(y.size))


class _PointSums:
    """Campbell sums for a point functional at ``x0`` with the rate-only
    factors of the resolvent precomputed (g is evaluated many times per
    solve)."""

    def __init__(self, basis: spectral.SpectralBasis, alpha: float, x0: float):
        self.basis, self.x0 = basis, float(x0)
        self.obs = spectral.modes(basis, x0)
        rates = np.concatenate([[alpha], 2.0 * alpha + basis.sigma])
        self.rates = rates
        c = basis.c
        self.q = np.sqrt(c * c + rates / basis.a)
        self.rm, self.rp = c - self.q, c + self.q
        self.denom = 2.0 * self.q * rates * -np.expm1(-2.0 * self.q)

    def _parts(self, beta):
        c, q = self.basis.c, self.q
        lo, hi = min(beta, self.x0), max(beta, self.x0)
        e_lo = np.exp(-2.0 * q * lo)
        e_hi = np.exp(-2.0 * q * (1.0 - hi))
        left = self.rm - self.rp * e_lo
        right = self.rm * e_hi - self.rp
        value = np.exp(c * (lo + hi) - q * (hi - lo)) * left * right / self.denom
        return value, e_lo, e_hi, left, right

    def __call__(self, beta, with_derivative=False):
        value, e_lo, e_hi, left, right = self._parts(beta)
        src = spectral.modes(self.basis, beta)
        w = src * self.obs
        s1, s2 = float(value[0]), float(np.sum(w * value[1:]))
        if not with_derivative:
            return s1, s2
        c, q = self.basis.c, self.q
        if beta <= self.x0:
            slope = c + q + 2.0 * q * self.rp * e_lo / left
        else:
            slope = c - q + 2.0 * q * self.rm * e_hi / right
        dvalue = value * slope
        dsrc = spectral.modes_deriv(self.basis, beta)
        ds1 = float(dvalue[0])
        ds2 = float(np.sum(dsrc * self.obs * value[1:] + w * dvalue[1:]))
        return s1, s2, ds1, ds2


def campbell_sums(basis: spectral.SpectralBasis, alpha: float, beta: float,
                  phi0, with_derivative: bool = False):
    """(S1, S2) and optionally (dS1/dbeta, dS2/dbeta).

    S1 = sum_j A_j / (alpha + sigma_j) and
    S2 = sum_{i,j} A_i A_j / (2 alpha + sigma_i + sigma_j) with
    A_j = psi_j(beta) <psi_j, phi0>.  For a point functional the inner sums
    are exact resolvents; a grid functional uses the truncated double sum.
    """
    if phi0.kind == "dirac":
        return _PointSums(basis, alpha, phi0.x0)(beta, with_derivative)
    src = spectral.modes(basis, beta)
    phi = observation_coeffs(basis, phi0)
    A = src * phi
    s1 = float(np.sum(A / (alpha + basis.sigma)))
    kern = 1.0 / (2.0 * alpha + basis.sigma[:, None] + basis.sigma[None, :])
    s2 = float(A @ kern @ A)
    if not with_derivative:
        return s1, s2
    dA = spectral.modes_deriv(basis, beta) * phi
    ds1 = float(np.sum(dA / (alpha + basis.sigma)))
    ds2 = float(2.0 * dA @ kern @ A)
    return s1, s2, ds1, ds2


def in_theta(theta, M_bound: float) -> bool:
    beta, lam = theta
    return 0.0 < beta < 1.0 and 0.0 < lam <= M_bound


class MomentModel:
    """g(theta) and its Jacobian for one model configuration.

    Linear links use the Campbell closed forms.  Otherwise g is a Monte Carlo
    average over ``mc_samples`` stationary shot-noise draws on (0, horizon];
    the draws are unit-rate arrival times fixed at construction and rescaled
    by 1/lam, so every theta sees the same randomness and g is smooth enough
    for Newton steps.
    """

    def __init__(self, config: ModelConfig, basis: spectral.SpectralBasis | None = None,
                 mc_samples: int = 20_000, mc_horizon: float | None = None,
                 mc_seed: int | None = None, force_mc: bool = False):
        self.config = config
        self.basis = basis or spectral.build_basis(config.a, config.b, config.J)
        self.kappa = config.h.kappa
        self.closed_form = config.h.is_linear and not force_mc
        if self.closed_form:
            if config.phi0.kind == "dirac":
                self._sums = _PointSums(self.basis, config.alpha, config.phi0.x0)
            else:
                self._sums = lambda beta, with_derivative=False: campbell_sums(
                    self.basis, config.alpha, beta, config.phi0, with_derivative)
        if not self.closed_form:
            self.horizon = mc_horizon if mc_horizon is not None else 5.0 / config.alpha
            seed = config.seed if mc_seed is None else mc_seed
            rng = stream(seed, "moments-crn")
            span = config.M_bound * self.horizon
            # unit-rate points on (0, M_bound * horizon]; rescaling by 1/lam
            # gives a rate-lam process on (0, horizon] for every admissible lam
            counts = rng.poisson(span, size=mc_samples)
            self._sample = np.repeat(np.arange(mc_samples), counts)
            self._arrivals = span * (1.0 - rng.random(self._sample.size))
            self.mc_samples = mc_samples
            self._obs = observation_coeffs(self.basis, config.phi0)

    def _check(self, theta):
        if not in_theta(theta, self.config.M_bound):
            raise DomainError(f"theta={tuple(theta)} outside the parameter box")

    def shot_noise_samples(self, theta) -> np.ndarray:
        """Common-random-number draws of V for ``theta``."""
        beta, lam = theta
        times = self._arrivals / lam
        keep = times <= self.horizon
        w = spectral.modes(self.basis, beta) * self._obs
        vals = spectral.decayed_sum(self.config.alpha + self.basis.sigma, times[keep], w)
        return np.bincount(self._sample[keep], vals, minlength=self.mc_samples)

    def g(self, theta) -> tuple[float, float]:
        self._check(theta)
        beta, lam = float(theta[0]), float(theta[1])
        if self.closed_form:
            s1, s2 = self._sums(beta)
            return (self.kappa * lam * s1,
                    self.kappa ** 2 * (lam * s2 + lam * lam * s1 * s1))
        hv = self.config.h(self.shot_noise_samples((beta, lam)))
        return float(np.mean(hv)), float(np.mean(hv * hv))

    def jacobian(self, theta) -> np.ndarray:
        self._check(theta)
        beta, lam = float(theta[0]), float(theta[1])
        if self.closed_form:
            s1, s2, ds1, ds2 = self._sums(beta, with_derivative=True)
            k = self.kappa
            return np.array([
                [k * lam * ds1, k * s1],
                [k * k * (lam * ds2 + 2.0 * lam * lam * s1 * ds1),
                 k * k * (s2 + 2.0 * lam * s1 * s1)],
            ])
        return self._fd_jacobian(beta, lam)

    def _fd_jacobian(self, beta, lam):
        out = np.empty((2, 2))
        lo = (BOX_EPS, BOX_EPS)
        hi = (1.0 - BOX_EPS, self.config.M_bound)
        point = [beta, lam]
        for col in range(2):
            h = FD_STEP * max(abs(point[col]), 1.0) if col == 1 else FD_STEP
            up, dn = list(point), list(point)
            up[col] = min(point[col] + h, hi[col])
            dn[col] = max(point[col] - h, lo[col])
            gu, gd = np.array(self.g(up)), np.array(self.g(dn))
            out[:, col] = (gu - gd) / (up[col] - dn[col])
        return out


def g_moments(theta, config: ModelConfig, model: MomentModel | None = None) -> tuple[float, float]:
    return (model or MomentModel(config)).g(theta)


def jacobian(theta, config: ModelConfig, model: MomentModel | None = None) -> np.ndarray:
    return (model or MomentModel(config)).jacobian(theta)


def _newton(model: MomentModel, targets: MomentTargets, start, lo, hi,
            tol=RESIDUAL_TOL, max_iter=MAX_ITER, noise_var=1.0):
    def residual(th):
        g1, g2 = model.g(th)
        return np.array([g1 - targets.m1, g2 + noise_var - targets.m2])

    theta = np.clip(np.asarray(start, dtype=float), lo, hi)
    r = residual(theta)
    norm = float(np.hypot(*r))
    trace = [(float(theta[0]), float(theta[1]), norm)]
    for it in range(max_iter):
        if norm <= tol:
            return theta, norm, it, True, trace
        jac = model.jacobian(theta)
        if abs(np.linalg.det(jac)) < DET_TOL:
            break
        step = np.linalg.solve(jac, r)
        for halving in range(MAX_HALVINGS + 1):
            cand = np.clip(theta - step / 2.0 ** halving, lo, hi)
            rc = residual(cand)
            nc = float(np.hypot(*rc))
            if nc < norm:
                break
        else:
            break
        theta, r, norm = cand, rc, nc
        trace.append((float(theta[0]), float(theta[1]), norm))
    return theta, norm, len(trace) - 1, norm <= tol, trace


def _result(model, theta, norm, iterations, converged, trace):
    try:
        cond = float(np.linalg.cond(model.jacobian(theta)))
    except (DomainError, np.linalg.LinAlgError):
        cond = np.inf
    return EstimationResult(float(theta[0]), float(theta[1]), iterations, norm,
                            bool(converged), cond, trace)


def solve_moment_equations(targets: MomentTargets, config: ModelConfig,
                           init=(1.0 / 3.0, 5.0), model: MomentModel | None = None,
                           tol: float = RESIDUAL_TOL, max_iter: int = MAX_ITER,
                           grid_size: int = 5, noise_free: bool = False) -> EstimationResult:
    """Solve the moment equations; never raises on non-convergence.

    Newton from ``init`` first.  If that stalls, hits a singular Jacobian or
    runs out of iterations, Newton is restarted from every point of a
    ``grid_size`` x ``grid_size`` grid over the box, best starting residual
    first.  Among converged runs the smallest residual wins, then the one
    closest to ``init``; if none converge the best-residual iterate is
    returned with ``converged=False``.  ``noise_free`` solves m2 = g2 for
    series observed without noise.
    """
    if not in_theta(init, config.M_bound):
        raise DomainError(f"initial point {tuple(init)} outside the parameter box")
    model = model or MomentModel(config)
    lo = np.array([BOX_EPS, BOX_EPS])
    hi = np.array([1.0 - BOX_EPS, config.M_bound])
    noise_var = 0.0 if noise_free else 1.0
    first = _newton(model, targets, init, lo, hi, tol, max_iter, noise_var)
    if first[3]:
        return _result(model, *first)

    def start_norm(p):
        g1, g2 = model.g(p)
        return float(np.hypot(g1 - targets.m1, g2 + noise_var - targets.m2))

    cells = (np.arange(grid_size) + 0.5) / grid_size
    starts = [(b, l * config.M_bound) for b in cells for l in cells]
    starts.sort(key=start_norm)
    runs = [first] + [_newton(model, targets, s, lo, hi, tol, max_iter, noise_var)
                      for s in starts]
    init_arr = np.asarray(init, dtype=float)
    pool = [i for i, r in enumerate(runs) if r[3]] or list(range(len(runs)))
    k = min(pool, key=lambda i: (runs[i][1], float(np.linalg.norm(runs[i][0] - init_arr))))
    best = runs[k]
    trace = [p for r in runs[:k + 1] for p in r[4]]
    iterations = sum(r[2] for r in runs[:k + 1])
    return _result(model, best[0], best[1], iterations, best[3], trace)


def estimate_parameters(obs: ObservationSeries, config: ModelConfig, init=(1.0 / 3.0, 5.0),
                        model: MomentModel | None = None,
                        noise_free: bool = False) -> EstimationResult:
    return solve_moment_equations(sample_moments(obs), config, init, model,
                                  noise_free=noise_free)


def rolling_estimates(obs: ObservationSeries, config: ModelConfig, init=(1.0 / 3.0, 5.0),
                      start: int = 50, stride: int = 1,
                      model: MomentModel | None = None) -> list[tuple[int, EstimationResult]]:
    """Estimates from the first k observations for k = start, start+stride, ..., n.

    Each solve starts from ``init``.
    """
    model = model or MomentModel(config)
    y = obs.y
    c1, c2 = np.cumsum(y), np.cumsum(y * y)
    ks = list(range(max(start, 1), y.size + 1, stride))
    if ks and ks[-1] != y.size:
        ks.append(y.size)
    out = []
    for k in ks:
        targets = MomentTargets(float(c1[k - 1] / k), float(c2[k - 1] / k), k)
        out.append((k, solve_moment_equations(targets, config, init, model)))
    return out


def write_trace_csv(rows: list[tuple[int, EstimationResult]], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["k", "beta_hat", "lambda_hat", "residual_norm", "converged"])
    for k, res in rows:
        writer.writerow([k, format(res.beta_hat, ".17g"), format(res.lambda_hat, ".17g"),
                         format(res.residual_norm, ".17g"), int(res.converged)])
