"""Sequential survival process: path density, survival and exact sampling.

A dyad alternates between the states ``+1`` (link) and ``-1`` (no link).
While in state ``s`` it leaves that state with hazard ``lambda(s, t)``, so
each holding time follows the survival law ``exp(-int lambda)``.  Anything
implementing :class:`Hazard` can drive the process.
"""

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Hazard",
    "ConstantHazard",
    "SampledPath",
    "log_path_density",
    "survival_probability",
    "sample_path",
]


class Hazard(Protocol):
    def evaluate(self, s: int, t: float) -> float:
        """Instantaneous rate of leaving state ``s`` at time ``t``."""

    def integrate(self, s: int, a: float, b: float) -> float:
        """Cumulative hazard of state ``s`` over ``[a, b]``."""


@dataclass(frozen=True)
class ConstantHazard:
    """Time-homogeneous hazard with one rate per state."""

    rate_link: float
    rate_nolink: float

    def evaluate(self, s, t):
        return self.rate_link if s == 1 else self.rate_nolink

    def integrate(self, s, a, b):
        return self.evaluate(s, a) * (b - a)


@dataclass(frozen=True)
class SampledPath:
    """Event times in ``(0, horizon)`` of a path started in ``initial_state``."""

    events: np.ndarray
    initial_state: int
    horizon: float

    def state_after(self, k):
        """State after the ``k``-th event (``k = 0`` is the initial state)."""
        return self.initial_state * (-1) ** k

    @property
    def holding_times(self):
        return np.diff(np.concatenate([[0.0], self.events]))

    def to_intervals(self):
        """Link intervals ``[t_start, t_end)`` of the path."""
        bounds = np.concatenate([[0.0], self.events, [self.horizon]])
        states = self.initial_state * (-1) ** np.arange(len(bounds) - 1)
        return np.stack([bounds[:-1][states == 1], bounds[1:][states == 1]], axis=1)


def log_path_density(hazard, seq, horizon=None):
    """Log-density of an observed, right-censored event sequence.

    Each completed segment contributes ``log lambda(s_m, e_m)`` minus its
    cumulative hazard; the final segment, censored at ``horizon``,
    contributes its survival term only.  The leading event at the start of
    the window carries no density term.
    """
    horizon = seq.horizon if horizon is None else horizon
    events, states = seq.events, seq.states
    if horizon <= events[-1]:
        raise ValueError("horizon must exceed the last event time")
    total = 0.0
    for m in range(len(events)):
        s = int(states[m])
        end = events[m + 1] if m + 1 < len(events) else horizon
        total -= hazard.integrate(s, events[m], end)
        if m + 1 < len(events):
            rate = hazard.evaluate(s, end)
            if not (math.isfinite(rate) and rate > 0):
                raise FloatingPointError(f"hazard {rate!r} at t={end}, state {s}")
            total += math.log(rate)
    if not math.isfinite(total):
        raise FloatingPointError("non-finite path log-density")
    return total


def survival_probability(hazard, s, a, b):
    """Probability of staying in state ``s`` throughout ``[a, b]``."""
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    if a == b:
        return 1.0
    return math.exp(-hazard.integrate(s, a, b))


def sample_path(hazard, s0, horizon, rng, max_events=None):
    """Draw one path on ``[0, horizon)`` by inverse-transform sampling.

    From the current time and state a unit-exponential target is drawn and
    the cumulative hazard is inverted by Brent's method; no root before the
    horizon censors the path.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if s0 not in (-1, 1):
        raise ValueError("initial state must be -1 or +1")
    tol = 1e-10 * horizon
    events = []
    t, s = 0.0, s0
    while True:
        target = -math.log1p(-rng.random())
        total = hazard.integrate(s, t, horizon)
        if not total >= 0:
            raise ValueError(f"cumulative hazard {total!r} on [{t}, {horizon}] is not >= 0")
        if total <= target:
            break
        t_start, s_now = t, s
        t_new = brentq(lambda u: hazard.integrate(s_now, t_start, u) - target,
                       t, horizon, xtol=tol)
        if t_new <= t:
            t_new = np.nextafter(t, horizon)
        elif hazard.integrate(s, t, t_new) > total:
            raise ValueError("cumulative hazard is not monotone in its upper limit")
        if t_new >= horizon:
            break
        events.append(t_new)
        t, s = t_new, -s
        if max_events is not None and len(events) > max_events:
            raise RuntimeError(f"path exceeded {max_events} events; hazard too large?")
    return SampledPath(np.asarray(events, dtype=float), s0, float(horizon))
