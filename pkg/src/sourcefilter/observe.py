"""Discrete noisy observations ``Y_i = h(<U_{t_i}, phi0>) + eps_i``, i >= 1."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import HFunction, ModelConfig
from .signal import SignalPath, functional_series


def apply_h(h: HFunction, z):
    return h(z)


@dataclass(frozen=True, eq=False)
class ObservationSeries:
    delta: float
    y: np.ndarray
    truth_s: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if self.truth_s is not None:
            s = np.asarray(self.truth_s, dtype=float)
            if s.shape != y.shape:
                raise ParameterError("truth_s must match y in length")
            object.__setattr__(self, "truth_s", s)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(1, self.n + 1)

    def head(self, n: int) -> "ObservationSeries":
        s = None if self.truth_s is None else self.truth_s[:n]
        return ObservationSeries(self.delta, self.y[:n], s)


def gen_observations(sp: SignalPath, config: ModelConfig, n: int,
                     rng: np.random.Generator, keep_truth: bool = True,
                     noise: bool = True) -> ObservationSeries:
    """Observe ``sp`` at t_i = i * delta, i = 1..n.

    ``rng`` feeds only the observation noise.  ``noise=False`` gives the
    noiseless variant ``Y_i = h(s_i)`` used in diagnostics.
    """
    if n < 1:
        raise ParameterError("need at least one observation")
    times = config.delta * np.arange(1, n + 1)
    s = functional_series(sp, times, config.phi0)
    eps = rng.standard_normal(n)
    y = apply_h(config.h, s) + (eps if noise else 0.0)
    return ObservationSeries(config.delta, y, s if keep_truth else None)


def write_observations_csv(obs: ObservationSeries, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    header = ["i", "t", "y"] + (["s_true"] if obs.truth_s is not None else [])
    writer.writerow(header)
    for i, (t, y) in enumerate(zip(obs.times, obs.y)):
        row = [i + 1, format(float(t), ".17g"), format(float(y), ".17g")]
        if obs.truth_s is not None:
            row.append(format(float(obs.truth_s[i]), ".17g"))
        writer.writerow(row)


def read_observations_csv(fh, delta: float | None = None) -> ObservationSeries:
    rows = list(csv.DictReader(fh))
    if not rows:
        raise ParameterError("observation file has no rows")
    y = np.array([float(r["y"]) for r in rows])
    s = np.array([float(r["s_true"]) for r in rows]) if "s_true" in rows[0] else None
    if delta is None:
        delta = float(rows[0]["t"]) / int(rows[0]["i"])
    return ObservationSeries(delta, y, s)
