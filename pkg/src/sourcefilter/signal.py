"""Mild-solution simulation of the Poisson-driven concentration field.

    U(t, x) = e^{-alpha t} sum_j e^{-sigma_j t} u0_j psi_j(x)
              + sum_{tau_k < t} e^{-alpha (t - tau_k)} P_{t - tau_k}(beta, x)

A path is stored as its jump times; values are recomputed on demand.  Jumps
landing exactly on an evaluation time do not count yet (left limits), and lags
shorter than ``TAU_MIN`` are clamped before the kernel is evaluated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import ParameterError
from .model import ModelConfig, Phi0Spec
from .spectral import TAU_MIN, SpectralBasis


@dataclass(frozen=True, eq=False)
class PoissonPath:
    rate: float
    horizon: float
    jump_times: np.ndarray

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        if jt.size and (np.any(np.diff(jt) <= 0) or jt[0] <= 0 or jt[-1] > self.horizon):
            raise ParameterError("jump times must be strictly increasing inside (0, horizon]")
        object.__setattr__(self, "jump_times", jt)

    def __len__(self):
        return self.jump_times.size


def sample_poisson_path(rate: float, horizon: float, rng: np.random.Generator) -> PoissonPath:
    """Jump times of a rate-``rate`` Poisson process on (0, horizon].

    Built from partial sums of exponential gaps, drawn in batches.
    """
    if rate < 0 or horizon <= 0:
        raise ParameterError("rate must be >= 0 and horizon > 0")
    if rate == 0:
        return PoissonPath(rate, horizon, np.empty(0))
    mean = rate * horizon
    batch = int(mean + 5.0 * np.sqrt(mean) + 16)
    chunks, last = [], 0.0
    while True:
        arrivals = last + np.cumsum(rng.exponential(1.0 / rate, size=batch))
        inside = arrivals[arrivals <= horizon]
        chunks.append(inside)
        if inside.size < batch:
            break
        last = arrivals[-1]
    return PoissonPath(rate, horizon, np.concatenate(chunks))


def write_jumps_csv(path: PoissonPath, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["jump_index", "jump_time"])
    for i, t in enumerate(path.jump_times, start=1):
        writer.writerow([i, format(float(t), ".17g")])


@dataclass(frozen=True, eq=False)
class SignalPath:
    basis: SpectralBasis
    u0_coeffs: np.ndarray
    path: PoissonPath
    beta: float
    alpha: float

    @property
    def rates(self) -> np.ndarray:
        return self.alpha + self.basis.sigma


def make_signal_path(config: ModelConfig, path: PoissonPath,
                     basis: SpectralBasis | None = None,
                     beta: float | None = None) -> SignalPath:
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    u0 = spectral.measure_coeffs(basis, config.u0)
    return SignalPath(basis, u0, path, config.beta if beta is None else float(beta),
                      config.alpha)


def simulate_signal(config: ModelConfig, horizon: float, rng: np.random.Generator,
                    basis: SpectralBasis | None = None) -> SignalPath:
    return make_signal_path(config, sample_poisson_path(config.lam, horizon, rng), basis)


def observation_coeffs(basis: SpectralBasis, phi0: Phi0Spec) -> np.ndarray:
    """phi_j = <psi_j, phi0>: psi_j(x0) for a point functional, Simpson
    quadrature on the grid otherwise."""
    if phi0.kind == "dirac":
        return spectral.modes(basis, phi0.x0)
    return spectral.project(basis, phi0.values)


def _field_weights(sp: SignalPath, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    source = spectral.modes(sp.basis, sp.beta)
    return sp.u0_coeffs * coeffs, source * coeffs


def _evaluate(sp: SignalPath, t: float, coeffs: np.ndarray) -> float:
    init_w, jump_w = _field_weights(sp, coeffs)
    value = float(spectral.decayed_sum(sp.rates, np.array([t]), init_w)[0])
    jt = sp.path.jump_times
    past = jt[jt < t]
    if past.size:
        lags = np.maximum(t - past, TAU_MIN)
        value += float(spectral.decayed_sum(sp.rates, lags, jump_w).sum())
    return value


def eval_signal(sp: SignalPath, t: float, x: float) -> float:
    if t < 0:
        raise ParameterError("time must be non-negative")
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x = {x} outside [0,1]")
    return _evaluate(sp, t, spectral.modes(sp.basis, x))


def functional(sp: SignalPath, t: float, phi0: Phi0Spec) -> float:
    """<U_t, phi0>."""
    if t < 0:
        raise ParameterError("time must be non-negative")
    return _evaluate(sp, t, observation_coeffs(sp.basis, phi0))


def mean_functional(config: ModelConfig, t: float,
                    basis: SpectralBasis | None = None) -> float:
    """E<U_t, phi0> in closed form."""
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    phi = observation_coeffs(basis, config.phi0)
    u0 = spectral.measure_coeffs(basis, config.u0)
    rates = config.alpha + basis.sigma
    initial = np.sum(np.exp(-rates * t) * u0 * phi)
    source = spectral.modes(basis, config.beta) * phi
    shots = config.lam * np.sum(source * -np.expm1(-rates * t) / rates)
    return float(initial + shots)


class ModeTracker:
    """Advance many signal paths through a common grid of observation times.

    Row ``r`` holds the spectral coefficients of path ``r`` restricted to the
    modes that survive one step (``(alpha + sigma_j) * min_step <= CUTOFF``);
    higher modes only matter for jumps inside the current step and are
    evaluated directly for those.  Each :meth:`step` returns ``<U_t, phi0>``
    for every row and agrees with :func:`functional` to rounding.
    """

    def __init__(self, basis: SpectralBasis, alpha: float, beta: float,
                 obs_coeffs: np.ndarray, u0_coeffs: np.ndarray, rows: int,
                 min_step: float):
        self.basis = basis
        self.rates = alpha + basis.sigma
        self.beta = float(beta)
        self.obs = np.asarray(obs_coeffs, dtype=float)
        self.keep = int(min(basis.n_modes,
                            np.searchsorted(self.rates, spectral.CUTOFF / min_step, "right")))
        self.source = spectral.modes(basis, beta)
        self.jump_weights = self.source * self.obs
        self.t = 0.0
        self.state = np.tile(np.asarray(u0_coeffs, dtype=float), (rows, 1))
        self.initial_full = True
        self.fresh_rows = np.empty(0, dtype=np.int64)
        self.fresh_times = np.empty(0)

    @property
    def rows(self) -> int:
        return self.state.shape[0]

    def set_source(self, beta: float) -> None:
        """Use source location ``beta`` for jumps from now on."""
        self.beta = float(beta)
        self.source = spectral.modes(self.basis, beta)
        self.jump_weights = self.source * self.obs

    def step(self, t_new: float, jump_rows: np.ndarray, jump_times: np.ndarray) -> np.ndarray:
        """Move to ``t_new``; jumps must satisfy ``self.t <= tau < t_new``."""
        dt = t_new - self.t
        if dt <= 0:
            raise ParameterError("tracker times must increase")
        if self.initial_full:
            # first step: the initial condition still carries every mode
            s = self._initial_values(dt)
            self.state = self.state[:, :self.keep] * np.exp(-self.rates[:self.keep] * dt)
            self.initial_full = False
        else:
            self.state *= np.exp(-self.rates[:self.keep] * dt)
            s = (self.state * self.obs[:self.keep]).sum(axis=1)
        if jump_times.size:
            lags = t_new - jump_times
            s += np.bincount(jump_rows,
                             spectral.decayed_sum(self.rates, np.maximum(lags, TAU_MIN),
                                                  self.jump_weights),
                             minlength=self.rows)
            add = np.exp(-np.multiply.outer(lags, self.rates[:self.keep])) * self.source[:self.keep]
            np.add.at(self.state, jump_rows, add)
        self.fresh_rows = np.asarray(jump_rows, dtype=np.int64)
        self.fresh_times = np.asarray(jump_times, dtype=float)
        self.t = t_new
        return s

    def _initial_values(self, dt):
        # all rows share the initial condition until the first step
        w = self.state[0] * self.obs
        v = float(spectral.decayed_sum(self.rates, np.array([dt]), w)[0])
        return np.full(self.rows, v)

    def take(self, index: np.ndarray) -> None:
        """Keep rows ``index`` (resampling); fresh jumps follow their rows."""
        index = np.asarray(index)
        self.state = self.state[index].copy()
        inverse = {}
        for new, old in enumerate(index):
            inverse.setdefault(int(old), []).append(new)
        rows, times = [], []
        for r, tau in zip(self.fresh_rows, self.fresh_times):
            for new in inverse.get(int(r), ()):
                rows.append(new)
                times.append(tau)
        self.fresh_rows = np.asarray(rows, dtype=np.int64)
        self.fresh_times = np.asarray(times, dtype=float)

    def profile(self, xs: np.ndarray) -> np.ndarray:
        """U(t, x) for every row at points ``xs``; shape (rows, len(xs))."""
        if self.initial_full:
            raise ParameterError("profile is available after the first step")
        m = spectral.modes(self.basis, xs)  # (nx, J+1)
        out = self.state @ m[:, :self.keep].T
        if self.fresh_times.size:
            # persistent modes of fresh jumps are already in the state
            lags = np.maximum(self.t - self.fresh_times, TAU_MIN)
            w = self.source[:, None] * m.T  # (J+1, nx)
            w[:self.keep] = 0.0
            vals = spectral.decayed_sum(self.rates, lags, w)
            np.add.at(out, self.fresh_rows, vals)
        return out


def functional_series(sp: SignalPath, times: np.ndarray, phi0: Phi0Spec) -> np.ndarray:
    """<U_t, phi0> at increasing ``times`` (all > 0) along one path."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.empty(0)
    coeffs = observation_coeffs(sp.basis, phi0)
    steps = np.diff(np.concatenate([[0.0], times]))
    tracker = ModeTracker(sp.basis, sp.alpha, sp.beta, coeffs, sp.u0_coeffs, 1, steps.min())
    jt = sp.path.jump_times
    # jumps in [t_{i-1}, t_i) enter at step i
    cuts = np.searchsorted(jt, times, side="left")
    out = np.empty(times.size)
    lo = 0
    for i, t in enumerate(times):
        hi = cuts[i]
        out[i] = tracker.step(t, np.zeros(hi - lo, dtype=np.int64), jt[lo:hi])[0]
        lo = hi
    return out
