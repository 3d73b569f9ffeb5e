"""Parameter containers for the pollution model.

The signal is the concentration U(t, x) on the river segment [0, 1]: it is
spread by dispersion ``a`` and drift ``b``, diluted at rate ``alpha``, and fed
by unit releases at location ``beta`` arriving as a Poisson process of rate
``lam``.  Observations are ``Y_i = h(<U_{t_i}, phi0>) + eps_i`` at
``t_i = i * delta`` with standard normal ``eps_i``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

DEFAULT_J = 200
DEFAULT_GRID = 201


@dataclass(frozen=True)
class HFunction:
    """Observation link ``h``: ``linear`` (kappa * z) or ``scaled_tanh``
    (kappa * tanh(z / scale)).  Only the tanh variant is bounded."""

    kind: str = "linear"
    kappa: float = 3.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "scaled_tanh"):
            raise ParameterError(f"unknown h kind {self.kind!r}")
        if self.kind == "scaled_tanh" and not self.scale > 0:
            raise ParameterError("h scale must be positive")

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "linear":
            return self.kappa * z
        return self.kappa * np.tanh(z / self.scale)


@dataclass(frozen=True, eq=False)
class Phi0Spec:
    """Observation functional: point evaluation at ``x0`` or a weight
    function sampled on the uniform quadrature grid of [0, 1]."""

    kind: str
    x0: float | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "dirac":
            if self.x0 is None or not 0.0 <= self.x0 <= 1.0:
                raise ParameterError("dirac x0 must lie in [0,1]")
        elif self.kind == "grid":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or vals.size < 3 or vals.size % 2 == 0:
                raise ParameterError("grid functional needs an odd number (>=3) of samples")
            if not np.all(np.isfinite(vals)):
                raise ParameterError("grid functional values must be finite")
            object.__setattr__(self, "values", vals)
        else:
            raise ParameterError(f"unknown phi0 kind {self.kind!r}")

    @classmethod
    def dirac(cls, x0: float) -> "Phi0Spec":
        return cls("dirac", x0=float(x0))

    @classmethod
    def grid(cls, values) -> "Phi0Spec":
        return cls("grid", values=values)


@dataclass(frozen=True, eq=False)
class InitialMeasure:
    """Initial concentration U(0, .) as a finite measure on [0, 1].

    ``density``: values on the uniform quadrature grid; ``point_masses``:
    (location, mass) atoms; ``spectral``: coefficients ``int psi_j dU_0``
    already computed for some basis.
    """

    kind: str
    values: np.ndarray | None = None
    atoms: tuple = ()
    coeffs: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "density":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or vals.size < 3 or vals.size % 2 == 0:
                raise ParameterError("density needs an odd number (>=3) of grid values")
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ParameterError("density values must be finite and non-negative")
            object.__setattr__(self, "values", vals)
        elif self.kind == "point_masses":
            atoms = tuple((float(x), float(m)) for x, m in self.atoms)
            for x, m in atoms:
                if not 0.0 <= x <= 1.0:
                    raise ParameterError(f"atom location {x} outside [0,1]")
                if m < 0 or not np.isfinite(m):
                    raise ParameterError(f"atom mass {m} must be finite and non-negative")
            object.__setattr__(self, "atoms", atoms)
        elif self.kind == "spectral":
            object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        else:
            raise ParameterError(f"unknown initial measure kind {self.kind!r}")

    @classmethod
    def constant(cls, level: float = 1.0, n_grid: int = DEFAULT_GRID) -> "InitialMeasure":
        return cls("density", values=np.full(n_grid, float(level)))

    @classmethod
    def zero(cls) -> "InitialMeasure":
        return cls("point_masses", atoms=())

    @classmethod
    def point_masses(cls, atoms) -> "InitialMeasure":
        return cls("point_masses", atoms=tuple(atoms))

    @classmethod
    def spectral(cls, coeffs) -> "InitialMeasure":
        return cls("spectral", coeffs=coeffs)

    def __add__(self, other: "InitialMeasure") -> "InitialMeasure":
        if self.kind == other.kind == "point_masses":
            return InitialMeasure.point_masses(self.atoms + other.atoms)
        if self.kind == other.kind == "density" and self.values.size == other.values.size:
            return InitialMeasure("density", values=self.values + other.values)
        if self.kind == other.kind == "spectral":
            return InitialMeasure.spectral(self.coeffs + other.coeffs)
        raise ParameterError("can only add initial measures of the same kind")


@dataclass(frozen=True)
class ModelConfig:
    a: float = 1.0
    b: float = 2.0
    alpha: float = 5.0
    beta: float = 0.6
    lam: float = 10.0
    M_bound: float = 50.0
    delta: float = 0.01
    h: HFunction = field(default_factory=HFunction)
    phi0: Phi0Spec = field(default_factory=lambda: Phi0Spec.dirac(0.2))
    u0: InitialMeasure = field(default_factory=InitialMeasure.constant)
    J: int = DEFAULT_J
    n_grid: int = DEFAULT_GRID
    seed: int = 0

    def __post_init__(self):
        if not self.a > 0:
            raise ParameterError("a must be positive")
        if self.b == 0:
            raise ParameterError("b must be non-zero")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError("beta must lie in (0,1)")
        if not self.M_bound > 0:
            raise ParameterError("M_bound must be positive")
        # lam = 0 is a valid (source-free) signal; estimation enforces lam > 0.
        if not 0.0 <= self.lam <= self.M_bound:
            raise ParameterError("lambda must lie in [0, M_bound]")
        if not self.delta > 0:
            raise ParameterError("delta must be positive")
        if self.J < 1:
            raise ParameterError("J must be >= 1")
        if self.n_grid < 3 or self.n_grid % 2 == 0:
            raise ParameterError("n_grid must be odd and >= 3")

    @property
    def theta(self) -> tuple[float, float]:
        return (self.beta, self.lam)

    def with_theta(self, beta: float, lam: float) -> "ModelConfig":
        return dataclasses.replace(self, beta=float(beta), lam=float(lam))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def reference_config(seed: int = 0) -> ModelConfig:
    """Model used in the reference simulation study: alpha=5, a=1, b=2,
    h(z)=3z, point observation at x0=0.2, source at 0.6 with rate 10,
    sampling interval 0.01 and unit initial concentration."""
    return ModelConfig(a=1.0, b=2.0, alpha=5.0, beta=0.6, lam=10.0, delta=0.01,
                       h=HFunction("linear", 3.0), phi0=Phi0Spec.dirac(0.2),
                       u0=InitialMeasure.constant(1.0), seed=seed)
