"""Tests for the graded-mesh fractional time stepping."""

import math

import numpy as np
import pytest
import scipy.integrate as si
import scipy.sparse.linalg as spla
from scipy.special import gamma as gamma_fn

from fracuq.errors import ConfigurationError, ToleranceError
from fracuq.estimator import example_initial, example_initial_gradient
from fracuq.fem import (StiffnessAssembler, assemble_mass, load_vector,
                        phi_integrals, ritz_projection, triangulate_unit_square)
from fracuq.field import build_example_field, build_sine_table_field
from fracuq.tfrac import (GradedTimeMesh, TrajectorySolver, exp_sum_kernel,
                          fast_history_apply, g_uniform, graded_mesh,
                          history_weights, l2J_norm, solve_trajectory,
                          weight_matrix)


def oracle_weight(tmesh, alpha, n, j):
    """w_nj by adaptive quadrature of the defining double integral.

    The inner integral over s is the exact increment of the fractional
    integral kernel antiderivative; the outer one is left to quad.
    """
    t = tmesh.t
    tau_n = t[n] - t[n - 1]
    tau_j = t[j] - t[j - 1]
    g2 = gamma_fn(2.0 - alpha)

    def inner(tt):
        hi = (tt - t[j - 1]) ** (1.0 - alpha) / g2
        lo = (max(tt - t[j], 0.0)) ** (1.0 - alpha) / g2 if tt > t[j] else 0.0
        return hi - lo

    val, err = si.quad(inner, t[n - 1], t[n], epsabs=0.0, epsrel=1e-12, limit=200)
    return val / (tau_n * tau_j)


class TestGradedMesh:
    def test_endpoints(self):
        tm = graded_mesh(2.0, 7, 3.0)
        assert tm.t[0] == 0.0
        assert tm.t[-1] == pytest.approx(2.0, rel=1e-14)
        assert np.all(tm.dt > 0)

    def test_uniform_when_gamma_one(self):
        tm = graded_mesh(1.0, 5, 1.0)
        assert np.allclose(tm.dt, 0.2)

    def test_first_level_strong_grading(self):
        tm = graded_mesh(1.0, 150, 4.0)
        assert tm.t[1] == pytest.approx((1.0 / 150.0) ** 4, rel=1e-14)
        assert tm.t[1] == pytest.approx(1.9753e-9, rel=1e-4)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            graded_mesh(1.0, 5, 0.5)
        with pytest.raises(ConfigurationError):
            graded_mesh(0.0, 5, 2.0)


class TestHistoryWeights:
    def test_uniform_diagonal_value(self):
        tm = graded_mesh(4.0, 4, 1.0)  # tau = 1
        row = history_weights(tm, 0.5, 1)
        assert row[0] == pytest.approx(1.0 / gamma_fn(2.5), rel=1e-14)

    def test_uniform_toeplitz_structure(self):
        alpha = 0.3
        tm = graded_mesh(1.0, 12, 1.0)
        wnn = history_weights(tm, alpha, 1)[0]
        for n in (5, 12):
            row = history_weights(tm, alpha, n)
            j = np.arange(1, n + 1)
            expected = wnn * g_uniform(n - j, alpha)
            assert np.allclose(row, expected, rtol=1e-12)

    def test_uniform_g1_value(self):
        # g_1 at alpha = 1/2 is 2^(3/2) - 2
        assert g_uniform(1, 0.5) == pytest.approx(2.0 ** 1.5 - 2.0, rel=1e-14)

    def test_quadrature_oracle_random_configs(self):
        rng = np.random.default_rng(12)
        for _ in range(12):
            alpha = rng.uniform(0.05, 0.95)
            gamma = rng.uniform(1.0, 5.0)
            nt = int(rng.integers(2, 13))
            tm = graded_mesh(1.0, nt, gamma)
            n = int(rng.integers(1, nt + 1))
            row = history_weights(tm, alpha, n)
            assert np.all(row > 0)
            for j in range(1, n + 1):
                assert row[j - 1] == pytest.approx(
                    oracle_weight(tm, alpha, n, j), rel=1e-9)

    def test_crank_nicolson_limit(self):
        alpha = 1.0 - 1e-8
        tm = graded_mesh(1.0, 8, 1.0)
        row = history_weights(tm, alpha, 8)
        assert row[-1] * tm.dt[-1] == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.abs(row[:-1]) < 1e-6)

    def test_bounds_checked(self):
        tm = graded_mesh(1.0, 4, 2.0)
        with pytest.raises(ConfigurationError):
            history_weights(tm, 0.5, 5)
        with pytest.raises(ConfigurationError):
            history_weights(tm, 1.5, 2)

    def test_weight_matrix_lower_triangular(self):
        tm = graded_mesh(1.0, 6, 3.0)
        W = weight_matrix(tm, 0.4)
        assert np.allclose(W, np.tril(W))
        for n in range(1, 7):
            assert np.allclose(W[n, 1: n + 1], history_weights(tm, 0.4, n))


class TestExpSumKernel:
    def test_uniform_relative_accuracy(self):
        alpha, eps = 0.5, 1e-8
        k = exp_sum_kernel(alpha, 1e-6, 1.0, eps)
        t = np.geomspace(1e-6, 1.0, 300)
        target = t ** (-alpha) / gamma_fn(1.0 - alpha)
        assert np.max(np.abs(k(t) - target) / target) <= eps

    def test_term_budget_enforced(self):
        with pytest.raises(ToleranceError):
            exp_sum_kernel(0.5, 1e-12, 1.0, 1e-14, max_terms=20)

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            exp_sum_kernel(0.5, 1.0, 0.5, 1e-8)


class TestFastHistory:
    def test_matches_direct_sum(self):
        alpha = 0.5
        tm = graded_mesh(1.0, 40, 4.0)
        rng = np.random.default_rng(8)
        mv = rng.normal(size=(tm.n_steps, 7))
        kernel = exp_sum_kernel(alpha, float(tm.dt.min()), tm.T, 1e-8)
        for n in (1, 2, 3, 17, 40):
            row = history_weights(tm, alpha, n)
            direct = row[: n - 1] @ mv[: n - 1] if n > 1 else np.zeros(7)
            fast = fast_history_apply(tm, alpha, n, mv[: n - 1], 1e-8, kernel)
            scale = np.max(np.abs(direct)) if n > 1 else 1.0
            assert np.allclose(fast, direct, atol=1e-7 * max(scale, 1e-30))

    def test_short_history_rejected(self):
        tm = graded_mesh(1.0, 5, 2.0)
        with pytest.raises(ConfigurationError):
            fast_history_apply(tm, 0.5, 4, np.zeros((1, 3)), 1e-8)


class TestL2JNorm:
    def test_constant_series(self):
        tm = graded_mesh(2.0, 9, 3.0)
        series = np.full(10, 1.5)
        assert l2J_norm(series, tm) == pytest.approx(1.5 * math.sqrt(2.0), rel=1e-13)

    def test_linear_series_exact(self):
        # the piecewise-linear reconstruction of t_n is t itself
        tm = graded_mesh(1.0, 7, 2.5)
        assert l2J_norm(tm.t, tm) == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-13)

    def test_vector_series_euclidean(self):
        tm = graded_mesh(1.0, 5, 2.0)
        rng = np.random.default_rng(6)
        series = rng.normal(size=(6, 3))
        direct = math.sqrt(sum(l2J_norm(series[:, c], tm) ** 2 for c in range(3)))
        assert l2J_norm(series, tm) == pytest.approx(direct, rel=1e-13)

    def test_length_checked(self):
        tm = graded_mesh(1.0, 5, 2.0)
        with pytest.raises(ConfigurationError):
            l2J_norm(np.zeros(5), tm)


def crank_nicolson_series(mesh, field, y, tau, n_steps, f, g, grad_g):
    """Independent Crank-Nicolson Galerkin reference for the alpha -> 1 limit."""
    M = assemble_mass(mesh)
    asm = StiffnessAssembler(mesh, field)
    D = asm.matrix(y)
    u = ritz_projection(mesh, field, y, g, grad_g, assembler=asm)
    phi = phi_integrals(mesh)
    series = [phi @ u]
    A = (M / tau + 0.5 * D).tocsc()
    lu = spla.splu(A)
    for n in range(1, n_steps + 1):
        rhs = load_vector(mesh, f, (n - 1) * tau, n * tau) - D @ u
        u = u + lu.solve(rhs)
        series.append(phi @ u)
    return np.array(series)


class TestTrajectorySolver:
    def setup_method(self):
        self.field = build_example_field(4)
        self.mesh = triangulate_unit_square(8)

    def test_crank_nicolson_degeneration(self):
        alpha = 1.0 - 1e-8
        tm = graded_mesh(1.0, 16, 1.0)
        rng = np.random.default_rng(13)
        y = rng.uniform(-0.5, 0.5, size=len(self.field))
        got = solve_trajectory(self.field, y, self.mesh, tm, alpha, 1.0,
                               example_initial, example_initial_gradient
                               ).functional_series(phi_integrals(self.mesh))
        ref = crank_nicolson_series(self.mesh, self.field, y, tm.dt[0], 16, 1.0,
                                    example_initial, example_initial_gradient)
        assert l2J_norm(got - ref, tm) <= 1e-4 * l2J_norm(ref, tm)

    def test_superposition(self):
        tm = graded_mesh(1.0, 10, 4.0)
        y = np.full(len(self.field), 0.2)

        def zero(x1, x2):
            return np.zeros_like(np.asarray(x1, dtype=float))

        def zero_grad(x1, x2):
            z = np.zeros_like(np.asarray(x1, dtype=float))
            return z, z

        full = solve_trajectory(self.field, y, self.mesh, tm, 0.5, 1.0,
                                example_initial, example_initial_gradient).u
        source_only = solve_trajectory(self.field, y, self.mesh, tm, 0.5, 1.0,
                                       zero, zero_grad).u
        init_only = solve_trajectory(self.field, y, self.mesh, tm, 0.5, 0.0,
                                     example_initial, example_initial_gradient).u
        assert np.allclose(full, source_only + init_only, atol=1e-12)

    def test_direct_and_pcg_agree(self):
        tm = graded_mesh(1.0, 12, 4.0)
        y = np.full(len(self.field), -0.3)
        args = (self.mesh, self.field, tm, 0.5, 1.0,
                example_initial, example_initial_gradient)
        direct = TrajectorySolver(*args, method="direct").functional_series(y)
        pcg = TrajectorySolver(*args, method="pcg", cg_tol=1e-12).functional_series(y)
        assert np.allclose(direct, pcg, rtol=1e-8, atol=1e-14)

    def test_fast_history_solver_close(self):
        tm = graded_mesh(1.0, 30, 4.0)
        y = np.full(len(self.field), 0.1)
        args = (self.mesh, self.field, tm, 0.5, 1.0,
                example_initial, example_initial_gradient)
        slow = TrajectorySolver(*args).functional_series(y)
        fast = TrajectorySolver(*args, fast_history=True,
                                fast_eps=1e-10).functional_series(y)
        assert np.max(np.abs(slow - fast)) <= 1e-7 * np.max(np.abs(slow))

    def test_truncated_parameters_consistent(self):
        tm = graded_mesh(1.0, 6, 2.0)
        solver = TrajectorySolver(self.mesh, self.field, tm, 0.5, 1.0,
                                  example_initial, example_initial_gradient)
        y = np.array([0.4, -0.1])
        padded = np.concatenate([y, np.zeros(len(self.field) - 2)])
        assert np.allclose(solver.functional_series(y),
                           solver.functional_series(padded), atol=1e-14)

    def test_initial_functional_near_one(self):
        # the initial datum has unit mean; its Ritz projection keeps it to O(h^2)
        tm = graded_mesh(1.0, 2, 2.0)
        mesh = triangulate_unit_square(24)
        solver = TrajectorySolver(mesh, self.field, tm, 0.5, 1.0,
                                  example_initial, example_initial_gradient)
        series = solver.functional_series(np.zeros(len(self.field)))
        assert series[0] == pytest.approx(1.0, abs=5e-3)

    def test_invalid_method(self):
        tm = graded_mesh(1.0, 4, 2.0)
        with pytest.raises(ConfigurationError):
            TrajectorySolver(self.mesh, self.field, tm, 0.5, 1.0,
                             example_initial, example_initial_gradient,
                             method="gauss")

    def test_monotone_decay_with_zero_source(self):
        # with f = 0 the functional of the subdiffusion solution decays
        tm = graded_mesh(1.0, 20, 4.0)

        def zero(x1, x2):
            return np.zeros_like(np.asarray(x1, dtype=float))

        series = solve_trajectory(
            self.field, np.zeros(len(self.field)), self.mesh, tm, 0.5, 0.0,
            example_initial, example_initial_gradient
        ).functional_series(phi_integrals(self.mesh))
        assert np.all(np.diff(series) < 0)
        assert series[-1] > 0
