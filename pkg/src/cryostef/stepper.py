"""Per-step implicit systems for the three fraction closures and the time loop.

Each backward-Euler step solves

    C(U) + Y(U) + tau*(A_bar U - bc) = tau*f + C(U_prev) + Y_prev

where Y(U) is the liquid-fraction update of the active closure:
equilibrium pins it to the fraction curve, the kinetic closure relaxes it
toward that curve with rate B, and the hysteretic closure clamps its
distance from the curve into a lagged envelope gap.  The sensible energy
C(U) is kept fully implicit; its slope only enters the Newton Jacobian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import solve as solvers
from .constitutive import (
    EXP_FLOOR,
    HysteresisEnvelope,
    capacity_derivative,
    capacity_energy,
    equilibrium_fraction,
    fraction_derivative,
)
from .errors import InfeasibleState, InvalidBounds, NonConvergence
from .grid import assemble, boundary_transmissibilities

EQ = "eq"
NEQ = "neq"
HYST = "hyst"


@dataclass(frozen=True)
class Closure:
    """Which fraction law closes the energy balance.

    ``rate`` is the relaxation rate of the kinetic law; ``envelope`` the
    calibrated hysteresis bounds.  Exactly the field matching ``kind`` is
    required.
    """

    kind: str
    rate: float | None = None
    envelope: HysteresisEnvelope | None = None

    def __post_init__(self):
        if self.kind == NEQ:
            if self.rate is None or self.rate <= 0.0:
                raise ValueError(f"kinetic closure needs a positive rate, got {self.rate}")
        elif self.kind == HYST:
            if self.envelope is None:
                raise ValueError("hysteretic closure needs a calibrated envelope")
        elif self.kind != EQ:
            raise ValueError(f"unknown closure kind {self.kind!r}")

    @staticmethod
    def equilibrium():
        return Closure(EQ)

    @staticmethod
    def kinetic(rate):
        return Closure(NEQ, rate=rate)

    @staticmethod
    def hysteresis(envelope):
        return Closure(HYST, envelope=envelope)


@dataclass
class TimeState:
    """Temperature and fraction vectors at one time level.

    ``beta`` records the lagged envelope gap that produced this state
    (hysteretic runs only).
    """

    t: float
    u: np.ndarray
    upsilon: np.ndarray
    beta: np.ndarray | None = None


def hysteresis_gap(closure, u_prev):
    """Envelope gap evaluated at the previous temperatures (the lag)."""
    env = closure.envelope
    return np.maximum(env.upper(u_prev) - env.lower(u_prev), 0.0)


def closure_fraction(closure, u, upsilon_prev, beta, tau, material):
    """Fraction update of the active closure at candidate temperatures ``u``."""
    f = equilibrium_fraction(u, material.b)
    if closure.kind == EQ:
        return f
    if closure.kind == NEQ:
        b_bar = 1.0 / (1.0 + tau * closure.rate)
        return (1.0 - b_bar) * f + b_bar * upsilon_prev
    if np.any(np.asarray(beta) < 0.0):
        raise InvalidBounds("negative envelope gap")
    return f + np.clip(upsilon_prev - f, 0.0, beta)


def _closure_slope(closure, u, upsilon_prev, beta, tau, material):
    # dY/dU diagonal; the clamp contributes nothing while strictly inside
    # its interval and the full fraction slope while pinned to a bound.
    fp = fraction_derivative(u, material.b)
    if closure.kind == EQ:
        return fp
    if closure.kind == NEQ:
        b_bar = 1.0 / (1.0 + tau * closure.rate)
        return (1.0 - b_bar) * fp
    s = upsilon_prev - equilibrium_fraction(u, material.b)
    interior = (s > 0.0) & (s < beta)
    return np.where(interior, 0.0, fp)


def step_residual(u, prev, closure, asm, f_n, tau, material):
    """Residual whose root is the accepted temperature of the step."""
    beta = hysteresis_gap(closure, prev.u) if closure.kind == HYST else None
    rhs = tau * np.asarray(f_n, dtype=float) + capacity_energy(prev.u, material) + prev.upsilon
    y = closure_fraction(closure, u, prev.upsilon, beta, tau, material)
    return capacity_energy(u, material) + y + tau * (asm.matvec(u) - asm.bc_rhs) - rhs


def step_jacobian(u, prev, closure, asm, tau, material):
    """Semismooth Jacobian (diag, off) of the step residual at ``u``."""
    beta = hysteresis_gap(closure, prev.u) if closure.kind == HYST else None
    diag = (
        capacity_derivative(u, material)
        + _closure_slope(closure, u, prev.upsilon, beta, tau, material)
        + tau * asm.diag
    )
    return diag, tau * asm.off


class StepProblem:
    """One implicit step with everything but the matrix frozen.

    The previous state, the lagged envelope gap, and the right-hand side
    are fixed at construction; the diffusion matrix is supplied by
    ``assembler`` and may be refreshed at any iterate, which is what the
    matrix-lagging outer loop does.
    """

    def __init__(self, prev, closure, tau, f_n, material, assembler):
        self.closure = closure
        self.tau = tau
        self.material = material
        self.assembler = assembler
        self.u_prev = prev.u
        self.upsilon_prev = prev.upsilon
        self.beta = hysteresis_gap(closure, prev.u) if closure.kind == HYST else None
        if self.beta is not None and np.any(self.beta < 0.0):
            raise InvalidBounds("negative envelope gap")
        self.rhs = (
            tau * np.asarray(f_n, dtype=float)
            + capacity_energy(prev.u, material)
            + prev.upsilon
        )
        self.initial_guess = np.array(prev.u, dtype=float, copy=True)

    def assemble(self, u):
        return self.assembler(u)

    def closure_fraction(self, u):
        return closure_fraction(
            self.closure, u, self.upsilon_prev, self.beta, self.tau, self.material
        )

    def residual(self, u, asm):
        return (
            capacity_energy(u, self.material)
            + self.closure_fraction(u)
            + self.tau * (asm.matvec(u) - asm.bc_rhs)
            - self.rhs
        )

    def jacobian(self, u, asm):
        diag = (
            capacity_derivative(u, self.material)
            + _closure_slope(
                self.closure, u, self.upsilon_prev, self.beta, self.tau, self.material
            )
            + self.tau * asm.diag
        )
        return diag, self.tau * asm.off


def _advance(prev, t_new, tau, closure, material, f_n, assembler, opts):
    problem = StepProblem(prev, closure, tau, f_n, material, assembler)
    try:
        u_new, report = solvers.solve_step(problem, opts)
    except NonConvergence as err:
        err.t = t_new
        raise
    upsilon_new = problem.closure_fraction(u_new)
    return TimeState(t_new, u_new, np.asarray(upsilon_new, dtype=float), problem.beta), report


def advance(prev, tau, closure, material, grid, f_fn, bc_fn, opts, face_average="harmonic"):
    """Advance one step; boundary data and source sampled at the new time.

    ``f_fn(t)`` returns the source at cell centers (scalar broadcasts);
    ``bc_fn(t)`` returns the pair of Dirichlet temperatures.  For
    hysteretic runs the envelope gap is computed from the previous
    temperatures before the solve.
    """
    if tau <= 0.0:
        raise ValueError(f"time step must be positive, got {tau}")
    t_new = prev.t + tau
    ud_left, ud_right = bc_fn(t_new)
    f_n = np.broadcast_to(np.asarray(f_fn(t_new), dtype=float), prev.u.shape)

    def assembler(u):
        return assemble(u, material, grid, ud_left, ud_right, face_average)

    return _advance(prev, t_new, tau, closure, material, f_n, assembler, opts)


def advance_fixed_matrix(prev, tau, closure, material, asm, f_fn, opts):
    """Advance one step with a state-independent diffusion matrix."""
    if tau <= 0.0:
        raise ValueError(f"time step must be positive, got {tau}")
    t_new = prev.t + tau
    f_n = np.broadcast_to(np.asarray(f_fn(t_new), dtype=float), prev.u.shape)
    return _advance(prev, t_new, tau, closure, material, f_n, lambda u: asm, opts)


def validate_initial_fraction(closure, material, u0, chi0, strict=False):
    """Apply the per-closure rules to a proposed initial fraction.

    Equilibrium runs always restart on the fraction curve.  Kinetic runs
    accept anything in [0, 1].  Hysteretic runs clamp into the envelope at
    the initial temperatures.  Out-of-range data raises in strict mode and
    is clamped with a warning otherwise.
    """
    u0 = np.asarray(u0, dtype=float)
    if closure.kind == EQ:
        return np.asarray(equilibrium_fraction(u0, material.b), dtype=float)
    chi0 = np.broadcast_to(np.asarray(chi0, dtype=float), u0.shape)
    if closure.kind == NEQ:
        lo = np.zeros_like(u0)
        hi = np.ones_like(u0)
    else:
        env = closure.envelope
        lo = np.asarray(env.lower(u0), dtype=float)
        # rounding can drop the upper curve below the lower one at the
        # exact match points; repair so the clamp interval is never inverted
        hi = np.maximum(np.asarray(env.upper(u0), dtype=float), lo)
    if np.any(chi0 < lo - 1e-12) or np.any(chi0 > hi + 1e-12):
        if strict:
            raise InfeasibleState("initial fraction outside its admissible range")
        warnings.warn(
            "initial fraction clamped into its admissible range",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.clip(chi0, lo, hi)


def energy_balance_defect(prev, new, material, grid, bc, f_n, tau, face_average="harmonic"):
    """Discrete energy bookkeeping error of an accepted step.

    Compares the change of total stored energy against sources minus the
    Dirichlet boundary fluxes, using the same transmissibilities as the
    assembly at the accepted state.  Equals the cell-sum of the step
    residual, so it inherits the solver tolerance.
    """
    ud_left, ud_right = bc
    asm = assemble(new.u, material, grid, ud_left, ud_right, face_average)
    t_left, t_right = boundary_transmissibilities(asm)
    h = grid.h
    stored = h * float(
        np.sum(
            capacity_energy(new.u, material)
            + new.upsilon
            - capacity_energy(prev.u, material)
            - prev.upsilon
        )
    )
    flux_out = t_left * (new.u[0] - ud_left) + t_right * (new.u[-1] - ud_right)
    supplied = tau * h * float(np.sum(f_n)) - tau * h * flux_out
    return stored - supplied


# ---------------------------------------------------------------------------
# Scalar fast path for the single-point coupled system du/dt + dchi/dt + a*u = f
# with c(u) = u.  Kept in plain floats because the fine-step convergence runs
# take ~1e5 steps; equivalence with the vector machinery is covered by tests.


def _fraction(u, b):
    if u >= 0.0:
        return 1.0
    z = b * u
    return math.exp(z) if z >= EXP_FLOOR else 0.0


def _fraction_slope(u, b):
    if u > 0.0:
        return 0.0
    z = b * u
    return b * math.exp(z) if z >= EXP_FLOOR else 0.0


def _envelope_upper(theta, env):
    if theta < env.theta0 or theta > 0.0:
        return _fraction(theta, env.b)
    g = env.a * math.exp(env.b_bar * theta) + env.D * theta + env.C
    return min(g, 1.0)


class ScalarOdeStepper:
    """Implicit integrator for the scalar coupled system with fixed stiffness.

    Solves u + chi(u) + tau*a*u = tau*f + u_prev + chi_prev per step by
    semismooth Newton on plain floats; ``chi(u)`` follows the configured
    closure exactly as in the vector stepper.
    """

    def __init__(self, closure, b, a_coef, tol=1e-8, max_iter=20):
        if closure.kind == HYST and not math.isclose(closure.envelope.b, b):
            raise ValueError("envelope steepness must match the fraction steepness")
        self.closure = closure
        self.b = b
        self.a_coef = a_coef
        self.tol = tol
        self.max_iter = max_iter

    def _chi(self, u, chi_prev, beta, tau):
        f = _fraction(u, self.b)
        if self.closure.kind == EQ:
            return f
        if self.closure.kind == NEQ:
            b_bar = 1.0 / (1.0 + tau * self.closure.rate)
            return (1.0 - b_bar) * f + b_bar * chi_prev
        return f + min(max(chi_prev - f, 0.0), beta)

    def _chi_slope(self, u, chi_prev, beta, tau):
        fp = _fraction_slope(u, self.b)
        if self.closure.kind == EQ:
            return fp
        if self.closure.kind == NEQ:
            b_bar = 1.0 / (1.0 + tau * self.closure.rate)
            return (1.0 - b_bar) * fp
        s = chi_prev - _fraction(u, self.b)
        return 0.0 if 0.0 < s < beta else fp

    def step(self, u_prev, chi_prev, tau, f_value):
        """One implicit step; returns (u, chi, iterations, residual)."""
        g = tau * f_value + u_prev + chi_prev
        beta = 0.0
        if self.closure.kind == HYST:
            env = self.closure.envelope
            beta = max(_envelope_upper(u_prev, env) - _fraction(u_prev, env.b), 0.0)
        u = u_prev
        for it in range(self.max_iter + 1):
            chi = self._chi(u, chi_prev, beta, tau)
            phi = u + chi + tau * self.a_coef * u - g
            if abs(phi) <= self.tol:
                return u, chi, it, abs(phi)
            slope = 1.0 + self._chi_slope(u, chi_prev, beta, tau) + tau * self.a_coef
            u -= phi / slope
        raise NonConvergence(
            f"scalar step stalled at residual {abs(phi):.3e}", residual=abs(phi)
        )
