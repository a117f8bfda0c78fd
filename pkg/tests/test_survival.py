import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from grassp.graph import EventSequence
from grassp.survival import (
    ConstantHazard,
    SampledPath,
    log_path_density,
    sample_path,
    survival_probability,
)


def _seq(events, states, horizon):
    return EventSequence((0, 1), np.array(events, float), np.array(states), horizon)


class LinearHazard:
    """Rate ``c + k t`` in both states (time-varying test double)."""

    def __init__(self, c, k):
        self.c, self.k = c, k

    def evaluate(self, s, t):
        return self.c + self.k * t

    def integrate(self, s, a, b):
        return self.c * (b - a) + 0.5 * self.k * (b * b - a * a)


class BrokenHazard:
    def evaluate(self, s, t):
        return 1.0

    def integrate(self, s, a, b):
        return -(b - a)


def test_density_two_segments_closed_form():
    a, b = 1.7, 0.4
    got = log_path_density(ConstantHazard(a, b), _seq([0, 1], [1, -1], 2.0))
    assert got == pytest.approx(math.log(a) - a - b, rel=1e-14)


def test_density_two_segments_quadrature_oracle():
    # generic formula evaluated with numerical quadrature of the rates
    a, b = 1.7, 0.4
    haz = ConstantHazard(a, b)
    quad = (math.log(haz.evaluate(1, 1.0))
            - integrate.quad(lambda t: haz.evaluate(1, t), 0, 1)[0]
            - integrate.quad(lambda t: haz.evaluate(-1, t), 1, 2)[0])
    assert log_path_density(haz, _seq([0, 1], [1, -1], 2.0)) == pytest.approx(quad, rel=1e-12)


def test_density_pure_survival():
    assert log_path_density(ConstantHazard(9.0, 0.3), _seq([0], [-1], 5.0)) == pytest.approx(-1.5)


def test_density_unit_hazard():
    assert log_path_density(ConstantHazard(1.0, 1.0), _seq([0, 0.37], [-1, 1], 3.0)) == \
        pytest.approx(-3.0)


def test_density_time_varying():
    haz = LinearHazard(0.5, 2.0)
    expected = math.log(0.5 + 2.0 * 0.6) - haz.integrate(0, 0.0, 1.0)
    assert log_path_density(haz, _seq([0, 0.6], [-1, 1], 1.0)) == pytest.approx(expected)


def test_density_errors():
    with pytest.raises(ValueError):
        log_path_density(ConstantHazard(1, 1), _seq([0, 0.5], [-1, 1], 1.0), horizon=0.5)
    with pytest.raises(FloatingPointError, match="state -1"):
        log_path_density(ConstantHazard(1.0, 0.0), _seq([0, 0.5], [-1, 1], 1.0))


def test_survival_examples():
    haz = ConstantHazard(2.0, 0.5)
    assert survival_probability(haz, 1, 0.3, 0.3) == 1.0
    assert survival_probability(haz, 1, 0.0, 1.0) == pytest.approx(0.1353352832366127, rel=1e-12)
    assert survival_probability(haz, -1, 1.0, 3.0) == pytest.approx(math.exp(-1), rel=1e-14)
    with pytest.raises(ValueError):
        survival_probability(haz, 1, 1.0, 0.5)


def test_sample_first_holding_time_mean():
    rng = np.random.default_rng(7)
    haz = _Stop(ConstantHazard(1.0, 1.0))
    draws = np.array([sample_path(haz, 1, 60.0, rng).events[0] for _ in range(100_000)])
    assert abs(draws.mean() - 1.0) < 0.01


class _Stop:
    """Wraps a hazard so the second segment never fires."""

    def __init__(self, inner):
        self.inner = inner

    def evaluate(self, s, t):
        return self.inner.evaluate(s, t) if s == 1 else 1e-300

    def integrate(self, s, a, b):
        return self.inner.integrate(s, a, b) if s == 1 else 0.0


def test_sample_nearly_empty():
    rng = np.random.default_rng(3)
    haz = ConstantHazard(1e-4, 1e-4)
    empty = sum(len(sample_path(haz, -1, 1.0, rng).events) == 0 for _ in range(10_000))
    assert empty >= 9900


def test_sample_deterministic():
    haz = LinearHazard(1.0, 3.0)
    a = sample_path(haz, -1, 4.0, np.random.default_rng(11))
    b = sample_path(haz, -1, 4.0, np.random.default_rng(11))
    np.testing.assert_array_equal(a.events, b.events)
    assert len(a.events) > 3


def test_sample_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_path(ConstantHazard(1, 1), -1, 0.0, rng)
    with pytest.raises(ValueError):
        sample_path(ConstantHazard(1, 1), 0, 1.0, rng)
    with pytest.raises(ValueError, match="not >= 0"):
        sample_path(BrokenHazard(), -1, 1.0, rng)
    with pytest.raises(RuntimeError):
        sample_path(ConstantHazard(1e4, 1e4), -1, 1.0, rng, max_events=10)


def _erlang_probabilities(a, b, horizon):
    """P(0, 1, 2 events) from state -1 with rates b (state -1) and a (state +1)."""
    p0 = math.exp(-b * horizon)
    p1 = integrate.quad(lambda t: b * math.exp(-b * t) * math.exp(-a * (horizon - t)),
                        0, horizon)[0]
    p2 = integrate.dblquad(
        lambda t2, t1: (b * math.exp(-b * t1) * a * math.exp(-a * (t2 - t1))
                        * math.exp(-b * (horizon - t2))),
        0, horizon, lambda t1: t1, lambda t1: horizon)[0]
    return [p0, p1, p2]


def test_event_count_distribution():
    a, b, horizon, n = 1.3, 0.8, 1.5, 40_000
    assert _erlang_probabilities(a, b, horizon)[1] == pytest.approx(
        b * (math.exp(-a * horizon) - math.exp(-b * horizon)) / (b - a), rel=1e-10)
    rng = np.random.default_rng(2024)
    counts = np.array([len(sample_path(ConstantHazard(a, b), -1, horizon, rng).events)
                       for _ in range(n)])
    for m, p in enumerate(_erlang_probabilities(a, b, horizon)):
        freq = np.mean(counts == m)
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n), (m, freq, p)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.0, 4.0),
       st.integers(0, 2**32 - 1), st.sampled_from([-1, 1]))
def test_sampled_path_density_finite(c, k, horizon_extra, seed, s0):
    horizon = 0.5 + horizon_extra
    haz = LinearHazard(c, k)
    path = sample_path(haz, s0, horizon, np.random.default_rng(seed))
    assert np.all((path.events > 0) & (path.events < horizon))
    assert np.all(np.diff(path.events) > 0)
    events = np.concatenate([[0.0], path.events])
    states = s0 * (-1) ** np.arange(len(events))
    value = log_path_density(haz, _seq(events, states, horizon))
    assert math.isfinite(value) and 0 < math.exp(value) < math.inf


def test_sampled_path_intervals():
    path = SampledPath(np.array([0.2, 0.5, 0.7]), -1, 1.0)
    np.testing.assert_array_equal(path.to_intervals(), [[0.2, 0.5], [0.7, 1.0]])
    assert path.state_after(3) == 1
    np.testing.assert_allclose(path.holding_times, [0.2, 0.3, 0.2])


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_additivity_contract(x, y, z):
    a, b, c = sorted((x, y, z))
    haz = LinearHazard(0.7, 1.9)
    assert haz.integrate(1, a, b) + haz.integrate(1, b, c) == pytest.approx(
        haz.integrate(1, a, c), rel=1e-10, abs=1e-15)
