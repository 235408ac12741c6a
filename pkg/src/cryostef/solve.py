"""Nonlinear solvers for the per-step implicit systems.

Three strategies are available.  The default ("newton-alag") freezes the
diffusion matrix at the latest outer iterate and runs a semismooth Newton
inner loop on the remaining monotone nonlinearity; the outer loop is
declared converged only when the residual with the matrix re-evaluated at
the current iterate meets the tolerance.  "fixed-point" lags both the
fraction term and the matrix and sweeps a linearized capacity solve; it
contracts only for mild data and is kept as a baseline.  "newton-frozen-a"
runs Newton on the true residual but omits the matrix derivative from the
Jacobian (the matrix is refreshed every iterate).

All strategies are deterministic: identical inputs produce bit-identical
iterates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constitutive import capacity_derivative, capacity_energy
from .errors import Divergence, NonConvergence, SingularJacobian

NEWTON_ALAG = "newton-alag"
FIXED_POINT = "fixed-point"
NEWTON_FROZEN_A = "newton-frozen-a"

# Saturation value of the fraction term, used in the a-priori iterate bound.
FRACTION_SUP = 1.0


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_inner: int = 20
    max_outer: int = 100
    strategy: str = NEWTON_ALAG

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class StepReport:
    """Iteration statistics for one implicit step."""

    outer_iters: int
    inner_iters_total: int
    residual_history: list = field(default_factory=list)
    converged: bool = False


def tridiag_matvec(diag, off, x):
    y = diag * x
    if off.size:
        y[:-1] += off * x[1:]
        y[1:] += off * x[:-1]
    return y


def thomas_solve(diag, off, rhs):
    """Direct solve of a symmetric tridiagonal system by elimination.

    Assumes the matrix is positive definite (true for every Jacobian built
    here); a collapsing pivot signals that assumption failed.
    """
    n = diag.shape[0]
    scale = float(np.max(np.abs(diag)))
    if off.size:
        scale = max(scale, float(np.max(np.abs(off))))
    tiny = max(scale, 1.0) * 1e-15

    w = diag.astype(float).copy()
    g = rhs.astype(float).copy()
    for i in range(1, n):
        piv = w[i - 1]
        if abs(piv) < tiny:
            raise SingularJacobian(f"pivot {piv} collapsed at row {i - 1}")
        m = off[i - 1] / piv
        w[i] -= m * off[i - 1]
        g[i] -= m * g[i - 1]
    if abs(w[-1]) < tiny:
        raise SingularJacobian(f"pivot {w[-1]} collapsed at last row")

    x = np.empty(n)
    x[-1] = g[-1] / w[-1]
    for i in range(n - 2, -1, -1):
        x[i] = (g[i] - off[i] * x[i + 1]) / w[i]
    return x


def newton_frozen_a(residual_fn, jacobian_fn, u0, opts, budget=None):
    """Plain (semismooth) Newton with a direct tridiagonal linear solve.

    ``budget`` bounds the number of updates (defaults to opts.max_inner);
    the natural initial guess is the previous time-step solution.
    """
    if budget is None:
        budget = opts.max_inner
    u = np.array(u0, dtype=float, copy=True)
    r = residual_fn(u)
    history = [float(np.max(np.abs(r)))]
    iters = 0
    while history[-1] > opts.tol:
        if iters >= budget:
            raise NonConvergence(
                f"Newton stalled at residual {history[-1]:.3e} after {iters} iterations",
                residual=history[-1],
                report=StepReport(1, iters, history, False),
            )
        diag, off = jacobian_fn(u)
        u = u - thomas_solve(diag, off, r)
        r = residual_fn(u)
        history.append(float(np.max(np.abs(r))))
        iters += 1
    return u, StepReport(1, iters, history, True)


def double_iteration(problem, opts):
    """Outer matrix-lagging loop around the frozen-matrix Newton solve.

    Each outer pass reassembles the diffusion matrix at the current
    iterate and hands the remaining Newton budget to the inner solve; the
    loop exits once the residual with the freshly assembled matrix is
    below tolerance, so accepted steps always satisfy the true nonlinear
    system.
    """
    u = np.array(problem.initial_guess, dtype=float, copy=True)
    asm = problem.assemble(u)
    history = []
    inner_total = 0
    for outer in range(1, opts.max_outer + 1):
        u, rep = newton_frozen_a(
            lambda v: problem.residual(v, asm),
            lambda v: problem.jacobian(v, asm),
            u,
            opts,
            budget=opts.max_inner - inner_total,
        )
        inner_total += rep.inner_iters_total
        history.extend(rep.residual_history)
        asm_next = problem.assemble(u)
        true_norm = float(np.max(np.abs(problem.residual(u, asm_next))))
        history.append(true_norm)
        if true_norm <= opts.tol:
            return u, StepReport(outer, inner_total, history, True)
        asm = asm_next
    raise NonConvergence(
        f"matrix lagging stalled after {opts.max_outer} outer passes",
        residual=history[-1],
        report=StepReport(opts.max_outer, inner_total, history, False),
    )


def newton_true_residual(problem, opts):
    """Newton on the true residual, matrix refreshed but not differentiated."""

    def residual_fn(u):
        return problem.residual(u, problem.assemble(u))

    def jacobian_fn(u):
        return problem.jacobian(u, problem.assemble(u))

    return newton_frozen_a(residual_fn, jacobian_fn, problem.initial_guess, opts)


def fixed_point_monolithic(problem, opts):
    """Monolithic fixed point lagging both the fraction term and the matrix.

    Each sweep solves the capacity system C(U) + tau*A_bar*U = w exactly
    (a single linear solve when c(u)=u, a short Newton otherwise) with the
    fraction term taken from the previous sweep.  Sweeping stops when
    successive iterates agree to tolerance and the true residual is below
    tolerance; iterates leaving twice the a-priori bound raise Divergence.
    """
    u = np.array(problem.initial_guess, dtype=float, copy=True)
    # a-priori bound on the iterates: coercivity dropped (kappa0 = 0), the
    # capacity's lower slope in the denominator, and the fraction term
    # bounded by its saturation value in every cell
    m = problem.material
    c_min = min(m.c_u, m.c_f)
    bound = (
        float(np.linalg.norm(problem.rhs)) + math.sqrt(u.size) * FRACTION_SUP
    ) / c_min
    history = []
    inner_total = 0
    for sweep in range(1, opts.max_outer + 1):
        asm = problem.assemble(u)
        lagged = problem.closure_fraction(u)
        w = problem.rhs - lagged + problem.tau * asm.bc_rhs
        u_new, inner = _capacity_solve(problem, asm, w, u, opts)
        inner_total += inner
        diff = float(np.max(np.abs(u_new - u)))
        true_norm = float(np.max(np.abs(problem.residual(u_new, problem.assemble(u_new)))))
        history.append(true_norm)
        if float(np.linalg.norm(u_new)) > 2.0 * bound:
            raise Divergence(
                f"iterate norm {np.linalg.norm(u_new):.3e} left the a-priori bound {bound:.3e}"
            )
        u = u_new
        if diff <= opts.tol and true_norm <= opts.tol:
            return u, StepReport(sweep, inner_total, history, True)
    raise NonConvergence(
        f"fixed point stalled after {opts.max_outer} sweeps",
        residual=history[-1],
        report=StepReport(opts.max_outer, inner_total, history, False),
    )


def _capacity_solve(problem, asm, w, u0, opts, max_iter=40):
    # Newton for C(U) + tau*A_bar*U = w; exact in one step when c(u)=u.
    m = problem.material
    tau = problem.tau
    tol = max(opts.tol * 1e-3, 1e-14)
    off = tau * asm.off
    u = np.array(u0, dtype=float, copy=True)
    for it in range(max_iter + 1):
        r = capacity_energy(u, m) + tau * asm.matvec(u) - w
        if float(np.max(np.abs(r))) <= tol:
            return u, it
        diag = capacity_derivative(u, m) + tau * asm.diag
        u = u - thomas_solve(diag, off, r)
    raise NonConvergence("capacity solve stalled", residual=float(np.max(np.abs(r))))


def solve_step(problem, opts):
    """Dispatch one implicit step to the configured strategy."""
    if opts.strategy == NEWTON_ALAG:
        return double_iteration(problem, opts)
    if opts.strategy == FIXED_POINT:
        return fixed_point_monolithic(problem, opts)
    if opts.strategy == NEWTON_FROZEN_A:
        return newton_true_residual(problem, opts)
    raise ValueError(f"unknown solver strategy {opts.strategy!r}")


def contraction_diagnostic(problem, probe_fn=None, n_probes=32, seed=0):
    """Analytic contraction bounds with probed matrix constants.

    Estimates the matrix Lipschitz constant via ``probe_fn(u1, u2, xi)``
    (zero when the matrix does not depend on the state) and the coercivity
    constant from random Rayleigh quotients, then evaluates the two
    contraction bounds: the matrix-lagging bound
    ``tau*L_A*||g||/(1 + tau*kappa0)`` and the monolithic fixed-point
    bound ``(tau*L_A + L_F)*(||g|| + F_sup)/(1 + tau*kappa0)``.  Reporting
    only; probing uses a fixed seed so reports are reproducible.
    """
    rng = np.random.default_rng(seed)
    u0 = np.asarray(problem.initial_guess, dtype=float)
    n = u0.shape[0]
    asm = problem.assemble(u0)

    kappa = np.inf
    for _ in range(n_probes):
        xi = rng.standard_normal(n)
        kappa = min(kappa, float(xi @ asm.matvec(xi) / (xi @ xi)))

    lipschitz = 0.0
    if probe_fn is not None:
        spread = max(1.0, float(np.max(np.abs(u0))))
        for _ in range(n_probes):
            u1 = u0 + spread * rng.standard_normal(n)
            u2 = u0 + spread * rng.standard_normal(n)
            xi = rng.standard_normal(n)
            lipschitz = max(lipschitz, float(probe_fn(u1, u2, xi)))

    g_norm = float(np.linalg.norm(problem.rhs))
    tau = problem.tau
    l_f = problem.material.b
    denom = 1.0 + tau * kappa
    return {
        "lipschitz_estimate": lipschitz,
        "coercivity_estimate": kappa,
        "alag_bound": tau * lipschitz * g_norm / denom,
        "fixed_point_bound": (tau * lipschitz + l_f) * (g_norm + FRACTION_SUP) / denom,
    }
