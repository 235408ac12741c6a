"""Interval constraint graphs, their resolvents, and generalized play.

The constraint graph on an interval [lo, hi] is the maximal monotone
set-valued map that is (-inf, 0] at lo, {0} inside, and [0, inf) at hi.
Its resolvent is the clamp onto the interval, independent of the step
size.  The generalized play evolves a bounded variable whose constraint
interval moves with an input signal; the variable only changes while
pinned to one of the moving bounds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleState, InvalidBounds

# Sentinel bounds standing in for an unconstrained graph; one code path.
UNBOUNDED_LIMIT = 1e300

# Slack allowed when checking that an incoming state obeys its interval.
FEASIBILITY_SLACK = 1e-12


@dataclass(frozen=True)
class ConstraintInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise InvalidBounds(f"interval bounds out of order: [{self.lo}, {self.hi}]")


UNBOUNDED = ConstraintInterval(-UNBOUNDED_LIMIT, UNBOUNDED_LIMIT)


def resolvent(interval, s):
    """Clamp ``s`` onto the interval; idempotent and non-expansive."""
    return np.clip(s, interval.lo, interval.hi)


def resolvent_derivative(interval, s):
    """Derivative selection for the clamp: 1 strictly inside, 0 on either bound."""
    s = np.asarray(s, dtype=float)
    return np.where((s > interval.lo) & (s < interval.hi), 1.0, 0.0)


@dataclass
class PlayState:
    """Current play output plus the last minimal-norm selection (1/time)."""

    v: float
    selection: float = 0.0


def constrained_ode_step(state, interval, tau, f_n):
    """One implicit step of dv/dt + C(v) ∋ f with a fixed interval graph.

    Returns the clamped update and the unique minimal-norm selection that
    makes the implicit step identity hold; the selection vanishes whenever
    the update lands strictly inside the interval.
    """
    if tau <= 0.0:
        raise ValueError(f"time step must be positive, got {tau}")
    if state.v < interval.lo - FEASIBILITY_SLACK or state.v > interval.hi + FEASIBILITY_SLACK:
        raise InfeasibleState(
            f"state {state.v} outside interval [{interval.lo}, {interval.hi}]"
        )
    s = state.v + tau * f_n
    v_new = float(resolvent(interval, s))
    return PlayState(v=v_new, selection=(s - v_new) / tau)


def play_step(v_prev, alpha, beta):
    """Generalized-play update with bounds [alpha, beta]; independent of tau."""
    if alpha > beta:
        raise InvalidBounds(f"play bounds out of order: [{alpha}, {beta}]")
    return min(max(v_prev, alpha), beta)


def drive_play(u_schedule, env, tau, T, v_init, strict=True):
    """Drive the hysteresis fraction with a prescribed temperature signal.

    At each step the fraction is clamped between the lower curve at the new
    temperature and the lower curve plus the envelope gap evaluated at the
    previous temperature (the gap is lagged by one step).  Returns an array
    of rows ``(t, u, chi)`` for steps 1..N with N = round(T/tau).

    ``v_init`` must start inside the envelope at u(0); with ``strict`` off
    an infeasible start is clamped in, with a warning.
    """
    if tau <= 0.0:
        raise ValueError(f"time step must be positive, got {tau}")
    n_steps = int(round(T / tau))
    if n_steps < 1:
        raise ValueError(f"horizon {T} shorter than one step {tau}")

    u_prev = float(u_schedule(0.0))
    lo = float(env.lower(u_prev))
    # rounding can invert the curves at the exact match points
    hi = max(float(env.upper(u_prev)), lo)
    if v_init < lo - FEASIBILITY_SLACK or v_init > hi + FEASIBILITY_SLACK:
        if strict:
            raise InfeasibleState(
                f"initial fraction {v_init} outside envelope [{lo}, {hi}] at u={u_prev}"
            )
        warnings.warn(
            f"initial fraction {v_init} clamped into envelope [{lo}, {hi}]",
            RuntimeWarning,
            stacklevel=2,
        )
    chi = min(max(v_init, lo), hi)

    rows = np.empty((n_steps, 3))
    for n in range(1, n_steps + 1):
        t = n * tau
        u = float(u_schedule(t))
        beta = max(float(env.upper(u_prev)) - float(env.lower(u_prev)), 0.0)
        f_u = float(env.lower(u))
        chi = f_u + play_step(chi - f_u, 0.0, beta)
        rows[n - 1] = (t, u, chi)
        u_prev = u
    return rows
