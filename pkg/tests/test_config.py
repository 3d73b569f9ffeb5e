import json

import pytest

from sourcefilter.config import SCHEMA, bundled_path, load_config, loads
from sourcefilter.errors import ConfigError
from sourcefilter.filtering import ResamplePolicy
from sourcefilter.model import reference_config


def test_bundled_config_is_the_reference_setup():
    cfg = load_config("paper_sec4.cfg")
    ref = reference_config(0)
    m = cfg.model
    assert (m.a, m.b, m.alpha, m.beta, m.lam, m.M_bound, m.delta) == \
        (ref.a, ref.b, ref.alpha, ref.beta, ref.lam, ref.M_bound, ref.delta)
    assert (m.h.kind, m.h.kappa, m.phi0.kind, m.phi0.x0) == ("linear", 3.0, "dirac", 0.2)
    assert (m.J, m.n_grid, m.seed) == (200, 201, 0)
    assert (cfg.n_obs, cfg.M_particles, cfg.init) == (550, 500, (1 / 3, 5.0))
    assert cfg.resample_policy == ResamplePolicy("off")
    assert cfg.rolling_estimate_start == 50 and cfg.rolling_estimate_stride == 1
    assert bundled_path().is_file()


def test_beta_outside_unit_interval():
    with pytest.raises(ConfigError, match=r"beta must lie in \(0,1\)"):
        loads("seed = 1\nbeta = 1.5\n")


@pytest.mark.parametrize("text, key", [
    ("beta = 0.5\n", "seed"),
    ("seed = 1\ncolour = red\n", "colour"),
    ("seed = 1\nalpha = 2\nalpha = 3\n", "alpha"),
    ("seed = 1\nJ = many\n", "J"),
    ("seed = 1\nn_grid = 200\n", "n_grid"),
    ("seed = 1\nlambda = 60\n", "lambda"),
    ("seed = 1\nresample_policy = stratified\n", "resample_policy"),
    ("seed = -2\n", "seed"),
])
def test_bad_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        loads(text)
    assert key in str(err.value)


def test_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 3"):
        loads("seed = 1\n# comment\nalpha = -1\n")
    with pytest.raises(ConfigError, match="line 2"):
        loads("seed = 1\njust words\n")


def test_json_variant_matches_text():
    text = "seed = 4\nbeta = 0.3\nlambda = 7\nresample_policy = ess:0.4\ndiag_slln = no\n"
    raw = {"seed": 4, "beta": 0.3, "lambda": 7, "resample_policy": "ess:0.4", "diag_slln": False}
    a, b = loads(text), loads(json.dumps(raw))
    assert a.model.theta == b.model.theta == (0.3, 7.0)
    assert a.resample_policy == b.resample_policy == ResamplePolicy("ess", 0.4)
    assert a.diagnostics == b.diagnostics and not a.diagnostics["slln"]
    with pytest.raises(ConfigError):
        loads('{"seed": 1,')
    with pytest.raises(ConfigError):
        loads(json.dumps({"seed": 1.5}))


def test_defaults_fill_every_key():
    cfg = loads("seed = 9\n")
    assert cfg.seed == 9 and cfg.workers == 1 and cfg.diag_n_mc == 10_000
    assert set(cfg.diagnostics) == {k[5:] for k in SCHEMA if k.startswith("diag_")
                                    and k not in ("diag_slln_n", "diag_n_mc")}


def test_replace_overrides():
    cfg = loads("seed = 9\n").replace(seed=3, output_dir="elsewhere", workers=4)
    assert (cfg.seed, cfg.output_dir, cfg.workers) == (3, "elsewhere", 4)
    with pytest.raises(ConfigError):
        cfg.replace(workers=0)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_defaults_are_validated():
    assert loads("seed = 2\n").resample_policy == ResamplePolicy("off")
