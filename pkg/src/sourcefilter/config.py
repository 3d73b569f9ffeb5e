"""Experiment configuration: flat ``key = value`` text or a JSON object.

Every key is typed and range-checked; unknown keys and a missing ``seed`` are
rejected with an error naming the key (and line, for text files).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ParameterError
from .filtering import ResamplePolicy
from .model import HFunction, InitialMeasure, ModelConfig, Phi0Spec

BUNDLED = ("paper_sec4.cfg",)


def _num(kind, lo=None, hi=None, lo_open=False, hi_open=False, msg=None):
    def check(key, raw):
        try:
            if kind is int:
                if isinstance(raw, float) and not raw.is_integer():
                    raise ValueError
                value = int(raw) if not isinstance(raw, str) else int(raw.strip())
            else:
                value = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {'an integer' if kind is int else 'a number'}, got {raw!r}")
        bad = ((lo is not None and (value <= lo if lo_open else value < lo))
               or (hi is not None and (value >= hi if hi_open else value > hi)))
        if bad:
            raise ConfigError(key, msg or f"value {value} out of range")
        return value
    return check


def _choice(*options):
    def check(key, raw):
        value = str(raw).strip().lower()
        if value not in options:
            raise ConfigError(key, f"expected one of {', '.join(options)}, got {raw!r}")
        return value
    return check


def _bool(key, raw):
    if isinstance(raw, bool):
        return raw
    value = str(raw).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def _text(key, raw):
    value = str(raw).strip()
    if not value:
        raise ConfigError(key, "must not be empty")
    return value


def _policy(key, raw):
    try:
        return ResamplePolicy.parse(str(raw))
    except (ParameterError, ValueError) as exc:
        raise ConfigError(key, str(exc))


# key -> (validator, default); a default of None means required
SCHEMA = {
    "seed": (_num(int, 0, msg="seed must be a non-negative integer"), None),
    "a": (_num(float, 0, lo_open=True, msg="a must be positive"), 1.0),
    "b": (_num(float), 2.0),
    "alpha": (_num(float, 0, lo_open=True, msg="alpha must be positive"), 5.0),
    "beta": (_num(float, 0, 1, True, True, "beta must lie in (0,1)"), 0.6),
    "lambda": (_num(float, 0, msg="lambda must be non-negative"), 10.0),
    "M_bound": (_num(float, 0, lo_open=True, msg="M_bound must be positive"), 50.0),
    "delta": (_num(float, 0, lo_open=True, msg="delta must be positive"), 0.01),
    "h": (_choice("linear", "scaled_tanh"), "linear"),
    "kappa": (_num(float), 3.0),
    "h_scale": (_num(float, 0, lo_open=True, msg="h_scale must be positive"), 1.0),
    "x0": (_num(float, 0, 1, msg="x0 must lie in [0,1]"), 0.2),
    "u0_level": (_num(float, 0, msg="u0_level must be non-negative"), 1.0),
    "J": (_num(int, 1, msg="J must be >= 1"), 200),
    "n_grid": (_num(int, 3, msg="n_grid must be >= 3"), 201),
    "n_obs": (_num(int, 1, msg="n_obs must be >= 1"), 550),
    "M_particles": (_num(int, 1, msg="M_particles must be >= 1"), 500),
    "resample_policy": (_policy, "off"),
    "output_dir": (_text, "out"),
    "init_beta": (_num(float, 0, 1, True, True, "init_beta must lie in (0,1)"), 1.0 / 3.0),
    "init_lambda": (_num(float, 0, lo_open=True, msg="init_lambda must be positive"), 5.0),
    "rolling_estimate_start": (_num(int, 1, msg="rolling_estimate_start must be >= 1"), 50),
    "rolling_estimate_stride": (_num(int, 1, msg="rolling_estimate_stride must be >= 1"), 1),
    "filter_theta": (_choice("estimate", "true"), "estimate"),
    "refresh_every": (_num(int, 0, msg="refresh_every must be >= 0"), 0),
    "profile_every": (_num(int, 0, msg="profile_every must be >= 0"), 0),
    "workers": (_num(int, 1, msg="workers must be >= 1"), 1),
    "diag_slln": (_bool, True),
    "diag_char_function": (_bool, True),
    "diag_campbell": (_bool, True),
    "diag_time_reversal": (_bool, True),
    "diag_coupling": (_bool, True),
    "diag_filter_error": (_bool, True),
    "diag_slln_n": (_num(int, 2, msg="diag_slln_n must be >= 2"), 100_000),
    "diag_n_mc": (_num(int, 5000, msg="diag_n_mc must be >= 5000"), 10_000),
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    n_obs: int
    M_particles: int
    resample_policy: ResamplePolicy
    output_dir: str
    init: tuple
    rolling_estimate_start: int
    rolling_estimate_stride: int
    filter_theta: str
    refresh_every: int
    profile_every: int
    workers: int
    diagnostics: dict
    diag_slln_n: int
    diag_n_mc: int

    @property
    def seed(self) -> int:
        return self.model.seed

    def replace(self, seed: int | None = None, output_dir: str | None = None,
                workers: int | None = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed", "seed must be a non-negative integer")
            changes["model"] = self.model.replace(seed=int(seed))
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers", "workers must be >= 1")
            changes["workers"] = int(workers)
        return dataclasses.replace(self, **changes)


def parse_text(text: str) -> dict:
    """Raw ``{key: (value, line)}`` from key = value text; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(None, f"line {lineno}: expected 'key = value'")
        if key in out:
            raise ConfigError(key, f"line {lineno}: duplicate key (first on line {out[key][1]})")
        out[key] = (value, lineno)
    return out


def build_config(raw: dict) -> ExperimentConfig:
    """Validate ``{key: value}`` or ``{key: (value, line)}`` against the schema."""
    values = {}
    for key, item in raw.items():
        value, line = item if isinstance(item, tuple) else (item, None)
        if key not in SCHEMA:
            where = f" (line {line})" if line else ""
            raise ConfigError(key, f"unknown key{where}")
        try:
            values[key] = SCHEMA[key][0](key, value)
        except ConfigError as exc:
            if line:
                raise ConfigError(key, f"line {line}: {str(exc).split(': ', 1)[-1]}") from None
            raise
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is None:
                raise ConfigError(key, "missing required key")
            values[key] = SCHEMA[key][0](key, default)
    if values["n_grid"] % 2 == 0:
        raise ConfigError("n_grid", "n_grid must be odd")
    if values["lambda"] > values["M_bound"]:
        raise ConfigError("lambda", "lambda must not exceed M_bound")
    if values["init_lambda"] > values["M_bound"]:
        raise ConfigError("init_lambda", "init_lambda must not exceed M_bound")
    try:
        model = ModelConfig(
            a=values["a"], b=values["b"], alpha=values["alpha"], beta=values["beta"],
            lam=values["lambda"], M_bound=values["M_bound"], delta=values["delta"],
            h=HFunction(values["h"], values["kappa"], values["h_scale"]),
            phi0=Phi0Spec.dirac(values["x0"]),
            u0=InitialMeasure.constant(values["u0_level"], values["n_grid"]),
            J=values["J"], n_grid=values["n_grid"], seed=values["seed"])
    except ParameterError as exc:
        raise ConfigError(None, str(exc)) from None
    diagnostics = {k[len("diag_"):]: values[k] for k in SCHEMA
                   if k.startswith("diag_") and isinstance(values[k], bool)}
    return ExperimentConfig(
        model=model, n_obs=values["n_obs"], M_particles=values["M_particles"],
        resample_policy=values["resample_policy"], output_dir=values["output_dir"],
        init=(values["init_beta"], values["init_lambda"]),
        rolling_estimate_start=values["rolling_estimate_start"],
        rolling_estimate_stride=values["rolling_estimate_stride"],
        filter_theta=values["filter_theta"], refresh_every=values["refresh_every"],
        profile_every=values["profile_every"], workers=values["workers"],
        diagnostics=diagnostics, diag_slln_n=values["diag_slln_n"],
        diag_n_mc=values["diag_n_mc"])


def loads(text: str) -> ExperimentConfig:
    """Parse config text; a leading ``{`` selects the JSON variant."""
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(None, f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(None, "JSON config must be an object")
        return build_config(raw)
    return build_config(parse_text(text))


def bundled_path(name: str = "paper_sec4.cfg"):
    if name not in BUNDLED:
        raise ConfigError(None, f"no bundled config named {name!r}")
    return resources.files("sourcefilter").joinpath("configs", name)


def load_config(path) -> ExperimentConfig:
    """Load ``path``; a bare bundled name (e.g. ``paper_sec4.cfg``) that does
    not exist on disk resolves to the packaged copy."""
    p = Path(path)
    if not p.exists() and p.name in BUNDLED and str(path) == p.name:
        return loads(bundled_path(p.name).read_text(encoding="utf-8"))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(None, f"cannot read config {path}: {exc.strerror or exc}") from None
    return loads(text)
