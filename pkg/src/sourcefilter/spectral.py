"""Eigen-system of L = a d^2/dx^2 + b d/dx on [0, 1] with Neumann ends.

With ``c = -b / (2a)`` the eigenpairs are

    sigma_0 = 0,               psi_0(x) = sqrt(2c / (1 - exp(-2c)))
    sigma_j = a (c^2 + (j pi)^2),  psi_j(x) = sqrt(2) exp(cx) sin(j pi x + k_j)

with ``k_j = arctan(-j pi / c)``.  They are orthonormal for the weight
``exp(-2cx)``.  The transition kernel is taken to be the truncated series

    P_t(y, x) = sum_{j<=J} exp(-sigma_j t) psi_j(y) psi_j(x),

which is *not* symmetrised by the weight; every downstream formula (signal,
moments, characteristic function) uses this same kernel so the model is
internally consistent.

Sums of the form ``sum_j exp(-r_j s) w_j`` are evaluated by
:func:`decayed_sum`, which drops modes whose decay exponent exceeds
``CUTOFF``.  Those terms are below 2e-22 relative to the weights and are
accounted for in :func:`green_tail_bound`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, ParameterError
from .model import DEFAULT_GRID, DEFAULT_J, InitialMeasure

TAU_MIN = 1e-8
CUTOFF = 50.0
_MAX_BLOCK = 1 << 21


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    a: float
    b: float
    c: float
    J: int
    sigma: np.ndarray  # sigma[0..J]
    k: np.ndarray      # k[1..J]; k[0] is unused and set to 0
    psi0_norm: float

    @property
    def n_modes(self) -> int:
        return self.J + 1


def build_basis(a: float, b: float, J: int = DEFAULT_J) -> SpectralBasis:
    if not a > 0:
        raise ParameterError(f"dispersion a must be positive, got {a}")
    if int(J) != J or J < 1:
        raise ParameterError(f"truncation J must be an integer >= 1, got {J}")
    if b == 0:
        raise ParameterError("velocity b = 0 (c = 0) is not supported")
    J = int(J)
    c = -b / (2.0 * a)
    j = np.arange(J + 1)
    sigma = a * (c * c + (j * np.pi) ** 2)
    sigma[0] = 0.0
    k = np.arctan(-j * np.pi / c)
    k[0] = 0.0
    psi0 = np.sqrt(2.0 * c / -np.expm1(-2.0 * c))
    sigma.flags.writeable = False
    k.flags.writeable = False
    return SpectralBasis(a=float(a), b=float(b), c=c, J=J, sigma=sigma, k=k,
                         psi0_norm=float(psi0))


def _check_point(basis, j, x):
    if int(j) != j or not 0 <= j <= basis.J:
        raise ParameterError(f"mode index {j} outside 0..{basis.J}")
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x = {x} outside [0,1]")


def psi(basis: SpectralBasis, j: int, x: float) -> float:
    _check_point(basis, j, x)
    if j == 0:
        return basis.psi0_norm
    return float(np.sqrt(2.0) * np.exp(basis.c * x) * np.sin(j * np.pi * x + basis.k[j]))


def psi_deriv(basis: SpectralBasis, j: int, x: float) -> float:
    _check_point(basis, j, x)
    if j == 0:
        return 0.0
    arg = j * np.pi * x + basis.k[j]
    return float(np.sqrt(2.0) * np.exp(basis.c * x)
                 * (basis.c * np.sin(arg) + j * np.pi * np.cos(arg)))


def modes(basis: SpectralBasis, x) -> np.ndarray:
    """All eigenfunctions at ``x``; shape ``x.shape + (J+1,)``."""
    x = np.asarray(x, dtype=float)[..., None]
    j = np.arange(basis.J + 1)
    out = np.sqrt(2.0) * np.exp(basis.c * x) * np.sin(j * np.pi * x + basis.k)
    out[..., 0] = basis.psi0_norm
    return out


def modes_deriv(basis: SpectralBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)[..., None]
    j = np.arange(basis.J + 1)
    arg = j * np.pi * x + basis.k
    out = np.sqrt(2.0) * np.exp(basis.c * x) * (basis.c * np.sin(arg) + j * np.pi * np.cos(arg))
    out[..., 0] = 0.0
    return out


def modes_used(rates: np.ndarray, lags) -> np.ndarray:
    """Number of leading modes :func:`decayed_sum` keeps for each lag.

    The count of rates with ``rate * lag <= CUTOFF`` is rounded up to a power
    of two (capped at the number of modes) so lags share a few block sizes.
    """
    lags = np.asarray(lags, dtype=float)
    with np.errstate(divide="ignore"):
        need = np.searchsorted(rates, CUTOFF / lags, side="right")
    need = np.maximum(need, 1)
    pow2 = 1 << np.ceil(np.log2(need)).astype(np.int64)
    return np.minimum(pow2, rates.size)


def decayed_sum(rates: np.ndarray, lags, weights) -> np.ndarray:
    """``sum_j exp(-rates[j] * lag) * weights[j]`` for every lag.

    ``rates`` must be non-decreasing.  ``weights`` has shape ``(n_modes,)`` or
    ``(n_modes, m)``; the result has shape ``lags.shape`` or
    ``lags.shape + (m,)``.  Reductions use numpy's pairwise summation along a
    contiguous axis, so each lag's value does not depend on which other lags
    share the call.
    """
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise DomainError("lags must be non-negative")
    w = np.asarray(weights, dtype=float)
    vector = w.ndim == 1
    w2 = w[:, None] if vector else w.reshape(w.shape[0], -1)
    flat = lags.ravel()
    out = np.zeros((flat.size, w2.shape[1]))
    if flat.size:
        used = modes_used(rates, flat)
        for nb in np.unique(used):
            idx = np.nonzero(used == nb)[0]
            step = max(1, _MAX_BLOCK // (nb * w2.shape[1]))
            wt = np.ascontiguousarray(w2[:nb].T)  # (m, nb)
            for lo in range(0, idx.size, step):
                sel = idx[lo:lo + step]
                e = np.exp(-np.multiply.outer(flat[sel], rates[:nb]))  # (rows, nb)
                out[sel] = (e[:, None, :] * wt[None, :, :]).sum(axis=2)
    if vector:
        return out[:, 0].reshape(lags.shape)
    return out.reshape(lags.shape + (w2.shape[1],))


def green(basis: SpectralBasis, t: float, y: float, x: float) -> float:
    """Truncated kernel P_t(y, x); rejects ``t < TAU_MIN``."""
    if t < TAU_MIN:
        raise DomainError(f"kernel time {t} below TAU_MIN={TAU_MIN}; clamp the lag first")
    for p in (y, x):
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"point {p} outside [0,1]")
    w = modes(basis, y) * modes(basis, x)
    return float(decayed_sum(basis.sigma, np.array([t]), w)[0])


def green_tail_bound(basis: SpectralBasis, t: float) -> float:
    """Bound on |P_t(y,x) - green(basis, t, y, x)| over all y, x.

    Every omitted term satisfies |psi_j(y) psi_j(x)| <= 2 max(1, e^{2c}).
    If modes 0..m-1 are kept, (m+i)^2 - m^2 >= i (2m + 1) gives the geometric
    bound

        sum_{j>=m} e^{-sigma_j t} <= e^{-a(c^2 + (m pi)^2) t} / (1 - e^{-a pi^2 (2m+1) t}).

    ``m`` is ``J + 1`` or fewer when the decay cutoff drops modes.  A
    floating-point allowance of ``m * eps`` times the same term bound is added
    so the bound also covers rounding in the computed sum.
    """
    if t <= 0:
        return np.inf
    a, c = basis.a, basis.c
    m = int(modes_used(basis.sigma, np.array([t]))[0])
    term = 2.0 * max(1.0, np.exp(2.0 * c))
    head = np.exp(-a * (c * c + (m * np.pi) ** 2) * t)
    ratio = -np.expm1(-a * np.pi ** 2 * (2 * m + 1) * t)
    return float(term * head / ratio + m * np.finfo(float).eps * term)


def uniform_grid(n: int = DEFAULT_GRID) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ParameterError("quadrature grid needs an odd number (>=3) of points")
    return np.linspace(0.0, 1.0, n)


def simpson_weights(n: int = DEFAULT_GRID) -> np.ndarray:
    """Composite Simpson weights on the uniform grid of ``n`` points."""
    grid = uniform_grid(n)
    return simpson(np.eye(n), x=grid, axis=1)


def project(basis: SpectralBasis, values) -> np.ndarray:
    """Coefficients ``int_0^1 psi_j(x) f(x) dx`` by composite Simpson."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ParameterError("empty grid function")
    grid = uniform_grid(values.size)
    return simpson(modes(basis, grid) * values[:, None], x=grid, axis=0)


def semigroup_coeffs(basis: SpectralBasis, t: float, coeffs) -> np.ndarray:
    return np.exp(-basis.sigma * t) * np.asarray(coeffs, dtype=float)


def semigroup_apply(basis: SpectralBasis, t: float, f, y: float) -> float:
    """T_t f(y) = int P_t(y, x) f(x) dx for ``f`` sampled on the uniform grid.

    ``t = 0`` returns the linear interpolant of ``f`` at ``y``.
    """
    f = np.asarray(f, dtype=float)
    if f.size == 0:
        raise ParameterError("empty grid function")
    if t < 0:
        raise DomainError("semigroup time must be non-negative")
    if t == 0:
        return float(np.interp(y, uniform_grid(f.size), f))
    w = modes(basis, y) * project(basis, f)
    return float(decayed_sum(basis.sigma, np.array([t]), w)[0])


def measure_coeffs(basis: SpectralBasis, mu: InitialMeasure) -> np.ndarray:
    """``u0_j = int psi_j(y) mu(dy)`` for j = 0..J."""
    if mu.kind == "density":
        return project(basis, mu.values)
    if mu.kind == "point_masses":
        out = np.zeros(basis.n_modes)
        for x, m in mu.atoms:
            out += m * modes(basis, x)
        return out
    coeffs = np.asarray(mu.coeffs, dtype=float)
    if coeffs.shape != (basis.n_modes,):
        raise ParameterError(f"spectral initial measure needs {basis.n_modes} coefficients")
    return coeffs.copy()


def _resolvent_parts(basis, rate, y, x):
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0):
        raise ParameterError("resolvent rate must be positive")
    a, c = basis.a, basis.c
    q = np.sqrt(c * c + rate / a)
    rm, rp = c - q, c + q
    lo, hi = min(x, y), max(x, y)
    left = rm - rp * np.exp(-2.0 * q * lo)
    right = rm * np.exp(-2.0 * q * (1.0 - hi)) - rp
    value = (np.exp(c * (lo + hi) - q * (hi - lo)) * left * right
             / (2.0 * q * rate * -np.expm1(-2.0 * q)))
    return value, q, rm, rp, lo, hi, left, right


def resolvent(basis: SpectralBasis, rate, y: float, x: float):
    """Exact infinite sum ``sum_j psi_j(y) psi_j(x) / (rate + sigma_j)``.

    The sum solves ``a u'' + b u' - rate u = -exp(2cy) delta_y`` with Neumann
    ends; the closed form is the product of the two one-sided homogeneous
    solutions, written with only decaying exponentials.  ``rate`` may be an
    array.
    """
    return _resolvent_parts(basis, rate, y, x)[0]


def resolvent_dy(basis: SpectralBasis, rate, y: float, x: float):
    """Derivative of :func:`resolvent` in the source point ``y``.

    At ``y == x`` the kernel has a kink; the left derivative is returned.
    """
    value, q, rm, rp, lo, hi, left, right = _resolvent_parts(basis, rate, y, x)
    c = basis.c
    if y <= x:
        slope = c + q + 2.0 * q * rp * np.exp(-2.0 * q * lo) / left
    else:
        slope = c - q + 2.0 * q * rm * np.exp(-2.0 * q * (1.0 - hi)) / right
    return value * slope
