"""Weighted Monte Carlo approximation of the filter.

Particles are independent copies of the signal simulated with plug-in
parameters (beta_hat, lam_hat) from the common initial condition.  After the
j-th observation each particle carries the log of

    R_l = exp( sum_{i<=j} Y_i h(s_{l,i}) - h(s_{l,i})^2 / 2 ),

``s_{l,i} = <U^l_{t_i}, phi0>``, and the filter estimate of a functional is
the R-weighted particle average.  Without resampling this is exactly the
batch ratio of sums; with ``ess`` resampling, particles are redrawn
multinomially whenever the effective sample size drops below a fraction of M.

Particle ``l`` draws its release times from its own stream keyed by
``(seed, l, block)``, so a particle's randomness does not depend on M or on
evaluation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import spectral
from .errors import ParameterError
from .estimate import MomentModel, estimate_parameters
from .model import HFunction, ModelConfig
from .observe import ObservationSeries
from .signal import ModeTracker, observation_coeffs, sample_poisson_path
from .streams import stream

JUMP_BLOCK_STEPS = 512
PROFILE_POINTS = 101


@dataclass(frozen=True)
class ResamplePolicy:
    kind: str = "off"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("off", "ess"):
            raise ParameterError(f"unknown resample policy {self.kind!r}")
        if self.kind == "ess" and not 0.0 < self.threshold <= 1.0:
            raise ParameterError("ESS threshold must lie in (0,1]")

    @classmethod
    def parse(cls, text: str) -> "ResamplePolicy":
        """``off`` or ``ess`` or ``ess:<fraction>``."""
        text = text.strip().lower()
        if text == "off":
            return cls("off")
        if text.startswith("ess"):
            _, _, frac = text.partition(":")
            return cls("ess", float(frac) if frac else 0.5)
        raise ParameterError(f"unknown resample policy {text!r}")

    def __str__(self):
        return "off" if self.kind == "off" else f"ess:{self.threshold:g}"


class _ParticleJumps:
    """Per-particle release times, generated block by block on demand."""

    def __init__(self, M, rate, seed, block_len):
        self.M, self.rate, self.seed = M, rate, seed
        self.block_len = block_len
        self.epoch = 0
        self.next_block = 0
        self.loaded_until = 0.0
        self.times = np.empty(0)
        self.rows = np.empty(0, dtype=np.int64)

    def _load(self, start, stop, block):
        times, rows = [], []
        for l in range(self.M):
            rng = stream(self.seed, "particle", l, block, self.epoch)
            path = sample_poisson_path(self.rate, stop - start, rng) if self.rate > 0 else None
            if path is not None and len(path):
                times.append(start + path.jump_times)
                rows.append(np.full(len(path), l, dtype=np.int64))
        if times:
            t = np.concatenate([self.times] + times)
            r = np.concatenate([self.rows] + rows)
            order = np.argsort(t, kind="stable")
            self.times, self.rows = t[order], r[order]
        self.loaded_until = stop

    def take(self, t0, t1):
        """Release (rows, times) with t0 <= tau < t1."""
        while self.loaded_until <= t1:
            b = self.next_block
            self._load(max(b * self.block_len, self.loaded_until), (b + 1) * self.block_len, b)
            self.next_block += 1
        lo = np.searchsorted(self.times, t0, side="left")
        hi = np.searchsorted(self.times, t1, side="left")
        rows, times = self.rows[lo:hi], self.times[lo:hi]
        self.times, self.rows = self.times[hi:], self.rows[hi:]
        return rows, times

    def reset_rate(self, rate, t_now):
        """Discard pending releases after ``t_now`` and redraw them at ``rate``."""
        self.rate = rate
        self.epoch += 1
        keep = self.times < t_now
        self.times, self.rows = self.times[keep], self.rows[keep]
        b = self.next_block - 1
        if b >= 0 and self.loaded_until > t_now:
            self.loaded_until = t_now
            self._load(t_now, (b + 1) * self.block_len, b)


@dataclass(eq=False)
class ParticleEnsemble:
    M: int
    theta_used: tuple
    resample_policy: ResamplePolicy
    seed: int
    h: HFunction
    delta: float
    tracker: ModeTracker
    jumps: _ParticleJumps
    log_weights: np.ndarray
    current_s: np.ndarray
    j: int = 0
    log_norm_const: float = 0.0
    resample_count: int = 0

    @property
    def t(self) -> float:
        return self.j * self.delta


def log_weight_increment(y_j: float, s, h: HFunction):
    """log R for one observation: ``y h(s) - h(s)^2 / 2``."""
    hs = h(s)
    return y_j * hs - 0.5 * hs * hs


def init_ensemble(M: int, config: ModelConfig, theta_hat, seed: int,
                  resample_policy: ResamplePolicy | None = None,
                  basis: spectral.SpectralBasis | None = None) -> ParticleEnsemble:
    if int(M) != M or M < 1:
        raise ParameterError(f"particle count must be >= 1, got {M}")
    M = int(M)
    beta, lam = _plug_in(theta_hat)
    basis = basis or spectral.build_basis(config.a, config.b, config.J)
    u0 = spectral.measure_coeffs(basis, config.u0)
    tracker = ModeTracker(basis, config.alpha, beta, observation_coeffs(basis, config.phi0),
                          u0, M, config.delta)
    jumps = _ParticleJumps(M, lam, seed, JUMP_BLOCK_STEPS * config.delta)
    return ParticleEnsemble(M=M, theta_used=(beta, lam),
                            resample_policy=resample_policy or ResamplePolicy(),
                            seed=seed, h=config.h, delta=config.delta, tracker=tracker,
                            jumps=jumps, log_weights=np.zeros(M), current_s=np.zeros(M))


def normalized_weights(ens: ParticleEnsemble) -> np.ndarray:
    w = np.exp(ens.log_weights - ens.log_weights.max())
    return w / w.sum()


def ess(ens: ParticleEnsemble) -> float:
    w = normalized_weights(ens)
    return float(1.0 / np.sum(w * w))


def posterior(ens: ParticleEnsemble, values=None):
    """Weighted particle average of ``values`` (default: current <U, phi0>).

    ``values`` has one row per particle; extra axes are averaged elementwise.
    """
    vals = ens.current_s if values is None else np.asarray(values, dtype=float)
    w = normalized_weights(ens)
    out = np.tensordot(w, vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def posterior_profile(ens: ParticleEnsemble, xs=None) -> tuple[np.ndarray, np.ndarray]:
    """Filtered concentration profile x -> E[U(t_j, x) | data]."""
    xs = np.linspace(0.0, 1.0, PROFILE_POINTS) if xs is None else np.asarray(xs, dtype=float)
    return xs, posterior(ens, ens.tracker.profile(xs))


def posterior_grid_functional(ens: ParticleEnsemble, g) -> float:
    """Filtered estimate of <U_t, g> for ``g`` sampled on the uniform grid."""
    g = np.asarray(g, dtype=float)
    xs = spectral.uniform_grid(g.size)
    vals = ens.tracker.profile(xs) @ (spectral.simpson_weights(g.size) * g)
    return posterior(ens, vals)


def _plug_in(theta_hat) -> tuple[float, float]:
    beta, lam = float(theta_hat[0]), float(theta_hat[1])
    if not (0.0 <= beta <= 1.0 and lam >= 0.0):
        raise ParameterError(f"plug-in theta {(beta, lam)} needs beta in [0,1] and lambda >= 0")
    return beta, lam


def set_theta(ens: ParticleEnsemble, theta_hat) -> None:
    """Switch plug-in parameters for future releases."""
    beta, lam = _plug_in(theta_hat)
    ens.theta_used = (beta, lam)
    ens.tracker.set_source(beta)
    ens.jumps.reset_rate(lam, ens.t)


def advance(ens: ParticleEnsemble, y_j: float, config: ModelConfig | None = None) -> ParticleEnsemble:
    """Propagate to the next observation time and reweight by ``y_j``.

    Advances ``ens`` in place and returns it.
    """
    t0, t1 = ens.j * ens.delta, (ens.j + 1) * ens.delta
    rows, times = ens.jumps.take(t0, t1)
    s = ens.tracker.step(t1, rows, times)
    inc = log_weight_increment(y_j, s, ens.h)
    before = logsumexp(ens.log_weights)
    ens.log_weights = ens.log_weights + inc
    ens.log_norm_const += float(logsumexp(ens.log_weights) - before)
    ens.current_s = s
    ens.j += 1
    return ens


def maybe_resample(ens: ParticleEnsemble) -> bool:
    policy = ens.resample_policy
    if policy.kind == "off" or ess(ens) >= policy.threshold * ens.M:
        return False
    rng = stream(ens.seed, "resample", ens.j)
    idx = rng.choice(ens.M, size=ens.M, p=normalized_weights(ens))
    ens.tracker.take(idx)
    ens.current_s = ens.current_s[idx]
    ens.log_weights = np.zeros(ens.M)
    ens.resample_count += 1
    return True


@dataclass
class FilterOutput:
    j: np.ndarray
    t: np.ndarray
    posterior_mean: np.ndarray
    ess: np.ndarray
    log_norm_const: np.ndarray
    M: int
    theta_used: tuple
    seed: int
    profiles: list = field(default_factory=list)  # (j, xs, concentration)
    theta_history: list = field(default_factory=list)  # (j, beta, lam)

    def __len__(self):
        return self.j.size


def run_filter(obs: ObservationSeries, config: ModelConfig, theta_hat, M: int,
               resample_policy: ResamplePolicy | None = None, seed: int = 0,
               refresh_every: int = 0, refresh_init=(1.0 / 3.0, 5.0),
               refresh_start: int = 0, profile_every: int = 0,
               basis: spectral.SpectralBasis | None = None) -> FilterOutput:
    """Run the particle approximation over every observation in ``obs``.

    ``refresh_every > 0`` re-estimates theta from Y_1..Y_j every that many
    steps once ``j >= refresh_start``; by default theta stays frozen.  The
    posterior recorded at step j uses the weights before any resampling.
    """
    if obs.delta != config.delta:
        raise ParameterError("observation spacing differs from config.delta")
    ens = init_ensemble(M, config, theta_hat, seed, resample_policy, basis)
    n = obs.n
    post, ess_rec, lnc = np.empty(n), np.empty(n), np.empty(n)
    history = [(0, *ens.theta_used)]
    profiles = []
    model = MomentModel(config, ens.tracker.basis) if refresh_every else None
    for i in range(n):
        advance(ens, obs.y[i])
        post[i] = posterior(ens)
        ess_rec[i] = ess(ens)
        lnc[i] = ens.log_norm_const
        if profile_every and ens.j % profile_every == 0:
            xs, conc = posterior_profile(ens)
            profiles.append((ens.j, xs, conc))
        maybe_resample(ens)
        if refresh_every and ens.j >= refresh_start and ens.j % refresh_every == 0 and ens.j < n:
            res = estimate_parameters(obs.head(ens.j), config, refresh_init, model)
            if res.converged:
                set_theta(ens, res.theta)
                history.append((ens.j, *ens.theta_used))
    return FilterOutput(j=np.arange(1, n + 1), t=obs.times, posterior_mean=post, ess=ess_rec,
                        log_norm_const=lnc, M=ens.M, theta_used=tuple(theta_hat), seed=seed,
                        profiles=profiles, theta_history=history)


def write_filter_csv(out: FilterOutput, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["j", "t", "posterior_mean", "ess", "log_norm_const"])
    for row in zip(out.j, out.t, out.posterior_mean, out.ess, out.log_norm_const):
        writer.writerow([int(row[0])] + [format(float(v), ".17g") for v in row[1:]])


def write_profile_csv(out: FilterOutput, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["j", "x", "posterior_concentration"])
    for j, xs, conc in out.profiles:
        for x, c in zip(xs, conc):
            writer.writerow([int(j), format(float(x), ".17g"), format(float(c), ".17g")])
