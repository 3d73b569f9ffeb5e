import io

import numpy as np
import pytest
from scipy import stats

from sourcefilter.errors import ParameterError
from sourcefilter.estimate import MomentModel, sample_moments
from sourcefilter.model import HFunction, InitialMeasure
from sourcefilter.observe import (ObservationSeries, apply_h, gen_observations,
                                  read_observations_csv, write_observations_csv)
from sourcefilter.signal import simulate_signal
from sourcefilter.streams import stream


@pytest.mark.parametrize("h,z,expected", [
    (HFunction("linear", 3.0), 2.0, 6.0),
    (HFunction("linear", 3.0), 0.0, 0.0),
    (HFunction("scaled_tanh", 3.0, 1.0), 0.0, 0.0),
])
def test_apply_h(h, z, expected):
    assert apply_h(h, z) == expected


def test_tanh_saturates():
    assert abs(apply_h(HFunction("scaled_tanh", 3.0, 1.0), 1e9)) <= 3.0


def test_pure_noise(cfg, basis):
    quiet = cfg.replace(lam=0.0, u0=InitialMeasure.zero())
    sp = simulate_signal(quiet, 1000.0, stream(0, "signal"), basis)
    obs = gen_observations(sp, quiet, 100_000, stream(0, "noise"))
    n = obs.n
    assert abs(obs.y.mean()) <= 4 / np.sqrt(n)
    assert abs(obs.y.var() - 1.0) <= 4 * np.sqrt(2 / n)


def test_determinism_and_indexing(cfg, basis):
    sp = simulate_signal(cfg, 1.0, stream(2, "signal"), basis)
    a = gen_observations(sp, cfg, 50, stream(2, "noise"))
    b = gen_observations(sp, cfg, 50, stream(2, "noise"))
    assert np.array_equal(a.y, b.y)
    assert a.times[0] == cfg.delta and a.n == 50
    with pytest.raises(ParameterError):
        gen_observations(sp, cfg, 0, stream(2, "noise"))


def test_residual_structure(cfg, basis):
    sp = simulate_signal(cfg, 100.0, stream(5, "signal"), basis)
    obs = gen_observations(sp, cfg, 10_000, stream(5, "noise"))
    resid = obs.y - cfg.h(obs.truth_s)
    r1 = np.corrcoef(resid[:-1], resid[1:])[0, 1]
    assert abs(r1) <= 4 / np.sqrt(obs.n)
    d = stats.kstest(resid, "norm").statistic
    assert d <= stats.kstwobign.isf(0.01) / np.sqrt(obs.n)


def test_first_moment_near_g1(cfg, basis):
    sp = simulate_signal(cfg, 5.5, stream(0, "signal"), basis)
    obs = gen_observations(sp, cfg, 550, stream(0, "noise"))
    g1, _ = MomentModel(cfg, basis).g(cfg.theta)
    # sampling sd of m1 at n=550 is well below 1 (about 0.2 at these parameters)
    assert abs(sample_moments(obs).m1 - g1) <= 1.0


def test_csv_roundtrip(cfg, basis):
    sp = simulate_signal(cfg, 1.0, stream(2, "signal"), basis)
    obs = gen_observations(sp, cfg, 20, stream(2, "noise"))
    buf = io.StringIO()
    write_observations_csv(obs, buf)
    assert buf.getvalue().splitlines()[0] == "i,t,y,s_true"
    back = read_observations_csv(io.StringIO(buf.getvalue()), cfg.delta)
    assert np.array_equal(back.y, obs.y) and np.array_equal(back.truth_s, obs.truth_s)
    blind = ObservationSeries(cfg.delta, obs.y)
    buf = io.StringIO()
    write_observations_csv(blind, buf)
    assert buf.getvalue().splitlines()[0] == "i,t,y"
    with pytest.raises(ParameterError):
        ObservationSeries(0.01, np.ones(3), np.ones(2))
