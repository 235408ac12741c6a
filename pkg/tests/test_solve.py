import math

import numpy as np
import pytest
from oracles import bisect, dense_newton_full

from cryostef.constitutive import ScaledMaterial, capacity_energy, equilibrium_fraction
from cryostef.errors import Divergence, NonConvergence, SingularJacobian
from cryostef.grid import Grid1D, StiffnessAssembly, assemble
from cryostef.solve import (
    SolverOptions,
    contraction_diagnostic,
    double_iteration,
    fixed_point_monolithic,
    newton_frozen_a,
    newton_true_residual,
    solve_step,
    thomas_solve,
    tridiag_matvec,
)
from cryostef.stepper import Closure, StepProblem, TimeState


def make_problem(u_prev, ups_prev, closure, material, grid, ud, f_n, tau):
    prev = TimeState(0.0, np.asarray(u_prev, float), np.asarray(ups_prev, float))

    def assembler(u):
        return assemble(u, material, grid, *ud)

    return StepProblem(prev, closure, tau, np.asarray(f_n, float), material, assembler)


def smooth_profile(rng, grid, lo=-5.0, hi=1.5):
    # spatially smooth random state, like the fields the time loop produces;
    # cell-wise-independent noise makes the diffusion term unphysically stiff
    x = grid.centers
    phase = rng.uniform(0.0, 2.0 * np.pi)
    shape = 0.5 * (1.0 + np.sin(2.0 * np.pi * x + phase))
    return lo + (hi - lo) * shape


class TestThomas:
    def test_matches_dense_solve(self, rng):
        for n in (1, 2, 5, 40):
            diag = rng.uniform(2.0, 4.0, size=n)
            off = rng.uniform(-0.9, 0.0, size=n - 1)
            a = np.diag(diag)
            if n > 1:
                a += np.diag(off, 1) + np.diag(off, -1)
            x = rng.standard_normal(n)
            rhs = a @ x
            got = thomas_solve(diag, off, rhs)
            assert np.allclose(got, x, atol=1e-12)
            assert np.allclose(tridiag_matvec(diag, off, x), rhs, atol=1e-12)

    def test_singular_raises(self):
        with pytest.raises(SingularJacobian):
            thomas_solve(np.array([1.0, 1.0]), np.array([1.0]), np.array([1.0, 1.0]))


class TestNewtonFrozenA:
    def test_linear_problem_one_iteration(self, rng):
        # affine residual: Newton lands on the solution in a single update
        n = 12
        diag = rng.uniform(2.0, 3.0, size=n)
        off = rng.uniform(-0.5, 0.0, size=n - 1)
        x_true = rng.standard_normal(n)
        rhs = tridiag_matvec(diag, off, x_true)
        residual = lambda u: tridiag_matvec(diag, off, u) - rhs
        jacobian = lambda u: (diag, off)
        u, rep = newton_frozen_a(residual, jacobian, np.zeros(n), SolverOptions(tol=1e-12))
        assert rep.inner_iters_total == 1
        assert np.max(np.abs(u - x_true)) <= 1e-12

    def test_scalar_eq_matches_bisection(self, unit_material):
        tau, kappa = 0.3, 2.0
        closure = Closure.equilibrium()
        prev = TimeState(0.0, np.array([-1.0]), np.array([math.exp(-1.0)]))
        asm = StiffnessAssembly(np.array([kappa]), np.array([]), np.zeros(1))
        problem = StepProblem(prev, closure, tau, np.array([1.5]), unit_material, lambda u: asm)
        opts = SolverOptions(tol=1e-12)
        u, rep = newton_frozen_a(
            lambda v: problem.residual(v, asm), lambda v: problem.jacobian(v, asm),
            problem.initial_guess, opts,
        )
        g_total = float(problem.rhs[0])
        root = bisect(
            lambda v: v + float(equilibrium_fraction(v, 1.0)) + tau * kappa * v - g_total,
            -100.0, 100.0,
        )
        assert abs(float(u[0]) - root) <= 1e-10

    def test_budget_exhaustion_raises(self, material):
        g = Grid1D(10)
        problem = make_problem(
            np.full(10, -5.0), equilibrium_fraction(np.full(10, -5.0), material.b),
            Closure.equilibrium(), material, g, (5.0, -5.0), np.zeros(10), 0.01,
        )
        asm = problem.assemble(problem.initial_guess)
        with pytest.raises(NonConvergence):
            newton_frozen_a(
                lambda v: problem.residual(v, asm), lambda v: problem.jacobian(v, asm),
                problem.initial_guess, SolverOptions(), budget=1,
            )

    def test_quadratic_tail_on_smooth_step(self, unit_material):
        # no cell crosses zero: the residual is smooth there and the final
        # Newton steps should contract quadratically
        g = Grid1D(12)
        u_prev = np.full(12, -5.0)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, 1.0), Closure.equilibrium(),
            unit_material, g, (-1.0, -5.0), np.zeros(12), 0.5,
        )
        asm = problem.assemble(problem.initial_guess)
        opts = SolverOptions(tol=1e-13, max_inner=30)
        u, rep = newton_frozen_a(
            lambda v: problem.residual(v, asm), lambda v: problem.jacobian(v, asm),
            problem.initial_guess, opts,
        )
        assert np.all(u < 0.0)
        hist = rep.residual_history
        assert len(hist) >= 4
        for r_prev, r_next in zip(hist[-3:-1], hist[-2:]):
            assert r_next <= 1e3 * r_prev**2


class TestDoubleIteration:
    def test_constant_conductivity_single_outer(self, unit_material, rng):
        g = Grid1D(8)
        u_prev = rng.uniform(-4, -1, size=8)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, 1.0), Closure.equilibrium(),
            unit_material, g, (-2.0, -2.0), rng.standard_normal(8), 0.05,
        )
        u, rep = double_iteration(problem, SolverOptions())
        assert rep.converged
        assert rep.outer_iters == 1

    @pytest.mark.parametrize("kind", ["eq", "neq", "hyst"])
    def test_matches_dense_oracle_m5(self, kind, material, envelope_ii, rng):
        # boundary data close to the previous state: the unique-solution
        # regime where plain undamped Newton is reliable
        g = Grid1D(5)
        closure = {
            "eq": Closure.equilibrium(),
            "neq": Closure.kinetic(5.0),
            "hyst": Closure.hysteresis(envelope_ii),
        }[kind]
        u_prev = smooth_profile(rng, g)
        ups_prev = np.clip(
            np.asarray(equilibrium_fraction(u_prev, material.b)) + rng.uniform(0, 0.1, 5),
            0.0, 1.0,
        )
        ud = (u_prev[0] + 0.4, u_prev[-1] - 0.4)
        f_n = 0.1 * rng.standard_normal(5)
        tau = 0.02
        problem = make_problem(u_prev, ups_prev, closure, material, g, ud, f_n, tau)
        u, rep = double_iteration(problem, SolverOptions(tol=1e-12, max_inner=60))
        reference = dense_newton_full(u_prev, ups_prev, closure, material, g.h, ud, f_n, tau)
        assert np.max(np.abs(u - reference)) <= 1e-8

    def test_neq_huge_rate_equals_eq_result(self, material, rng):
        g = Grid1D(5)
        u_prev = rng.uniform(-5.0, 1.0, size=5)
        ups_prev = np.asarray(equilibrium_fraction(u_prev, material.b))
        args = (material, g, (2.0, -3.0), np.zeros(5), 0.01)
        pa = make_problem(u_prev, ups_prev, Closure.equilibrium(), *args)
        pb = make_problem(u_prev, ups_prev, Closure.kinetic(1e14), *args)
        opts = SolverOptions(tol=1e-12, max_inner=60)
        ua, _ = double_iteration(pa, opts)
        ub, _ = double_iteration(pb, opts)
        assert np.max(np.abs(ua - ub)) <= 1e-8

    def test_true_residual_enforced(self, material, rng):
        g = Grid1D(20)
        u_prev = rng.uniform(-5.0, 2.0, size=20)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, material.b), Closure.equilibrium(),
            material, g, (4.0, -4.0), np.zeros(20), 0.05,
        )
        opts = SolverOptions(max_inner=60)
        u, rep = double_iteration(problem, opts)
        asm = problem.assemble(u)
        assert float(np.max(np.abs(problem.residual(u, asm)))) <= opts.tol
        assert rep.residual_history[-1] <= opts.tol

    def test_determinism(self, material, rng):
        g = Grid1D(15)
        u_prev = smooth_profile(rng, g, lo=-5.0, hi=2.0)
        ups_prev = np.asarray(equilibrium_fraction(u_prev, material.b))
        ud = (u_prev[0] - 0.5, u_prev[-1] + 0.5)
        runs = []
        for _ in range(2):
            problem = make_problem(
                u_prev, ups_prev, Closure.equilibrium(), material, g,
                ud, np.zeros(15), 0.02,
            )
            u, rep = double_iteration(problem, SolverOptions(max_inner=60))
            runs.append((u, rep.residual_history))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert runs[0][1] == runs[1][1]


class TestFixedPoint:
    def test_trivial_linear_case_single_sweep(self, unit_material):
        # deeply frozen cells: the fraction term is exactly zero, conductivity
        # constant, and the previous state already solves the step
        g = Grid1D(6)
        u_prev = np.full(6, -800.0)
        asm = assemble(u_prev, unit_material, g, -800.0, -800.0)
        f_n = asm.matvec(u_prev) - asm.bc_rhs
        problem = make_problem(
            u_prev, np.zeros(6), Closure.kinetic(1.0), unit_material, g,
            (-800.0, -800.0), f_n, 0.1,
        )
        u, rep = fixed_point_monolithic(problem, SolverOptions())
        assert rep.converged
        assert rep.outer_iters == 1
        assert np.max(np.abs(u - u_prev)) <= 1e-12

    def test_small_tau_agrees_with_double_iteration(self, unit_material, rng):
        # contraction regime of the lagged-fraction sweep: c(u)=u so the
        # capacity slope is 1 and the state stays away from the kink,
        # keeping the fraction slope well below 1
        g = Grid1D(20)
        u_prev = rng.uniform(-5.0, -2.0, size=20)
        ups_prev = np.asarray(equilibrium_fraction(u_prev, 1.0))
        args = (
            Closure.equilibrium(), unit_material, g,
            (u_prev[0] - 0.2, u_prev[-1] - 0.2), np.zeros(20), 1e-4,
        )
        ua, _ = fixed_point_monolithic(make_problem(u_prev, ups_prev, *args), SolverOptions(max_outer=400))
        ub, _ = double_iteration(make_problem(u_prev, ups_prev, *args), SolverOptions(max_inner=60))
        assert np.max(np.abs(ua - ub)) <= 1e-6

    def test_steep_curve_fails_cleanly(self, rng):
        # Lipschitz constant of the fraction term far above the contraction
        # threshold: the sweep must stop with an error, not loop forever
        steep = ScaledMaterial(b=10.0, c_u=1.0, c_f=1.0, k_u=1.0, k_f=1.0)
        g = Grid1D(8)
        u_prev = np.linspace(-0.4, 0.3, 8)
        ups_prev = np.asarray(equilibrium_fraction(u_prev, 10.0))
        problem = make_problem(
            u_prev, ups_prev, Closure.equilibrium(), steep, g,
            (0.5, -0.5), np.zeros(8), 0.1,
        )
        with pytest.raises((NonConvergence, Divergence)):
            fixed_point_monolithic(problem, SolverOptions(max_outer=60))


class TestStrategyDispatch:
    @pytest.mark.parametrize("kind", ["eq", "neq", "hyst"])
    def test_all_strategies_agree_on_small_instances(self, kind, unit_material, envelope_ii, rng):
        # c(u)=u and a state away from the kink: the regime where the lagged
        # sweep provably contracts, so all three strategies converge
        g = Grid1D(5)
        closure = {
            "eq": Closure.equilibrium(),
            "neq": Closure.kinetic(5.0),
            "hyst": Closure.hysteresis(envelope_ii),
        }[kind]
        u_prev = smooth_profile(rng, g, lo=-5.0, hi=-1.5)
        ups_prev = np.clip(
            np.asarray(equilibrium_fraction(u_prev, 1.0)) + rng.uniform(0, 0.1, 5),
            0.0, 1.0,
        )
        args = (closure, unit_material, g, (u_prev[0] + 0.3, u_prev[-1] - 0.3), np.zeros(5), 0.01)
        solutions = []
        for strategy in ("newton-alag", "fixed-point", "newton-frozen-a"):
            problem = make_problem(u_prev, ups_prev, *args)
            opts = SolverOptions(strategy=strategy, max_inner=60, max_outer=4000)
            u, rep = solve_step(problem, opts)
            assert rep.converged
            solutions.append(u)
        for u in solutions[1:]:
            assert np.max(np.abs(u - solutions[0])) <= 1e-6

    def test_unknown_strategy_rejected(self, material):
        g = Grid1D(5)
        problem = make_problem(
            np.zeros(5) - 1, np.full(5, math.exp(-1)), Closure.equilibrium(),
            material, g, (0.0, 0.0), np.zeros(5), 0.01,
        )
        opts = SolverOptions()
        opts.strategy = "bogus"
        with pytest.raises(ValueError):
            solve_step(problem, opts)

    def test_quasi_newton_reaches_true_residual(self, material, rng):
        # kink-free instance: plain undamped Newton is only guaranteed to
        # behave away from the grid of u=0 crossings
        g = Grid1D(10)
        u_prev = smooth_profile(rng, g, lo=-5.0, hi=-1.0)
        ud = (u_prev[0] + 0.5, u_prev[-1] - 0.5)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, material.b), Closure.equilibrium(),
            material, g, ud, np.zeros(10), 0.05,
        )
        opts = SolverOptions(max_inner=60)
        u, rep = newton_true_residual(problem, opts)
        asm = problem.assemble(u)
        assert float(np.max(np.abs(problem.residual(u, asm)))) <= opts.tol


class TestContractionDiagnostic:
    def test_constant_conductivity_zero_bound(self, unit_material, rng):
        g = Grid1D(8)
        u_prev = rng.uniform(-3, -1, size=8)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, 1.0), Closure.equilibrium(),
            unit_material, g, (0.0, 0.0), np.zeros(8), 0.1,
        )
        diag = contraction_diagnostic(problem)  # no probe: matrix independent of state
        assert diag["lipschitz_estimate"] == 0.0
        assert diag["alag_bound"] == 0.0
        assert diag["coercivity_estimate"] > 0.0

    def test_vanishing_tau_limits(self, material, rng):
        from cryostef.grid import lipschitz_probe

        g = Grid1D(8)
        u_prev = rng.uniform(-5, 1, size=8)
        probe = lambda a, b, c: lipschitz_probe(a, b, c, material, g)
        problems = {}
        for tau in (1e-6, 1e-9):
            problems[tau] = make_problem(
                u_prev, equilibrium_fraction(u_prev, material.b), Closure.equilibrium(),
                material, g, (1.0, -1.0), np.zeros(8), tau,
            )
        d6 = contraction_diagnostic(problems[1e-6], probe_fn=probe)
        d9 = contraction_diagnostic(problems[1e-9], probe_fn=probe)
        # lag bound vanishes with tau; fixed-point bound tends to L_F (||g|| + 1)
        assert d9["alag_bound"] < d6["alag_bound"]
        g_norm = float(np.linalg.norm(problems[1e-9].rhs))
        assert d9["fixed_point_bound"] == pytest.approx(material.b * (g_norm + 1.0), rel=1e-3)

    def test_reference_step_reports_finite_positives(self, material, rng):
        from cryostef.grid import lipschitz_probe

        g = Grid1D(20)
        u_prev = rng.uniform(-5, 2, size=20)
        problem = make_problem(
            u_prev, equilibrium_fraction(u_prev, material.b), Closure.equilibrium(),
            material, g, (5.0, -5.0), np.zeros(20), 0.1,
        )
        probe = lambda a, b, c: lipschitz_probe(a, b, c, material, g)
        diag = contraction_diagnostic(problem, probe_fn=probe)
        for value in diag.values():
            assert np.isfinite(value) and value > 0.0
