"""Second-order time stepping for the Caputo subdiffusion problem.

Levels t_n = (n tau)^gamma concentrate steps near t = 0.  Each step solves
(w_nn M + D/2) V^n = F^n - D U^{n-1} - sum_{j<n} w_nj M V^j and the
convolution weights come from exact antiderivative differences of the
fractional kernel, evaluated in cancellation-safe form.  An optional
exponential-sum surrogate accelerates the history sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma as gamma_fn

from .errors import ConfigurationError, SolverError, ToleranceError
from .fem import StiffnessAssembler, assemble_mass, load_vector, phi_integrals

__all__ = [
    "GradedTimeMesh",
    "graded_mesh",
    "history_weights",
    "weight_matrix",
    "g_uniform",
    "SolutionTrajectory",
    "TrajectorySolver",
    "solve_trajectory",
    "ExpSumKernel",
    "exp_sum_kernel",
    "fast_history_apply",
    "l2J_norm",
]


@dataclass(frozen=True)
class GradedTimeMesh:
    """Time levels t_n = (n tau)^gamma with tau = T^(1/gamma) / n_steps."""

    T: float
    n_steps: int
    gamma: float
    tau: float
    t: np.ndarray
    dt: np.ndarray


def graded_mesh(T: float, n_steps: int, gamma: float) -> GradedTimeMesh:
    if T <= 0 or n_steps < 1 or gamma < 1:
        raise ConfigurationError("need T > 0, n_steps >= 1, gamma >= 1")
    tau = T ** (1.0 / gamma) / n_steps
    t = (np.arange(n_steps + 1) * tau) ** gamma
    return GradedTimeMesh(T=T, n_steps=n_steps, gamma=float(gamma), tau=tau,
                          t=t, dt=np.diff(t))


def _omega3(t, alpha: float):
    """Riemann-Liouville kernel antiderivative w_{3-a}(t) = t^(2-a)/Gamma(3-a)."""
    return np.asarray(t) ** (2.0 - alpha) / gamma_fn(3.0 - alpha)


def _omega3_diff(base, gap, alpha: float):
    """w_{3-a}(base+gap) - w_{3-a}(base), stable when gap << base."""
    base = np.asarray(base, dtype=float)
    g23 = gamma_fn(3.0 - alpha)
    out = np.empty_like(base)
    zero = base <= 0
    out[zero] = gap ** (2.0 - alpha) / g23
    nz = ~zero
    b = base[nz]
    out[nz] = b ** (2.0 - alpha) * np.expm1((2.0 - alpha) * np.log1p(gap / b)) / g23
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _omega2_diff(x, gap, alpha: float):
    """w_{2-a}(x+gap) - w_{2-a}(x), stable when gap << x (requires x > 0)."""
    e = 1.0 - alpha
    return x ** e * np.expm1(e * np.log1p(gap / x)) / gamma_fn(2.0 - alpha)


def _far_weight_integral(base, delta, tau: float, alpha: float):
    """int_0^delta w_{2-a}(base+s+tau) - w_{2-a}(base+s) ds by Gauss-Legendre.

    Equals the second mixed difference of w_{3-a} over the rectangle, but
    without the cancellation that formula suffers when delta << base.  The
    integrand is analytic on [0, delta] once base >= 2 delta, so 12 nodes
    reach machine accuracy.
    """
    s = 0.5 * delta[:, None] * (_GL_NODES[None, :] + 1.0)
    vals = _omega2_diff(base[:, None] + s, tau, alpha)
    return 0.5 * delta * (vals @ _GL_WEIGHTS)


def history_weights(tmesh: GradedTimeMesh, alpha: float, n: int) -> np.ndarray:
    """Convolution weight row (w_n1, ..., w_nn) of the scheme.

    The diagonal is w_{3-a}(tau_n)/tau_n^2; for j < n the double integral of
    w_{1-a}(t-s) over I_n x I_j telescopes into four w_{3-a} values, grouped
    here so each first-level difference spans the larger gap tau_n.  Far
    history terms (short I_j seen from a distant I_n) switch to a quadrature
    of the equivalent single integral, which stays fully accurate where the
    four-term formula cancels.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    if not 1 <= n <= tmesh.n_steps:
        raise ConfigurationError(f"n={n} outside 1..{tmesh.n_steps}")
    t, dt = tmesh.t, tmesh.dt
    tau_n = dt[n - 1]
    row = np.empty(n)
    row[n - 1] = float(_omega3(tau_n, alpha)) / tau_n ** 2
    if tmesh.gamma == 1.0:
        # uniform mesh: the weights are Toeplitz, w_nj = w_nn g_{n-j}
        row[: n - 1] = row[n - 1] * g_uniform(n - np.arange(1, n), alpha)
        return row
    if n > 1:
        j = np.arange(1, n)
        base_lo = t[n - 1] - t[j]          # gap to the right end of I_j
        base_hi = t[n - 1] - t[j - 1]      # gap to the left end of I_j
        num = _omega3_diff(base_hi, tau_n, alpha) - _omega3_diff(base_lo, tau_n, alpha)
        far = base_lo >= 2.0 * dt[j - 1]
        if np.any(far):
            num[far] = _far_weight_integral(base_lo[far], dt[j - 1][far],
                                            tau_n, alpha)
        row[: n - 1] = num / (tau_n * dt[j - 1])
    return row


def weight_matrix(tmesh: GradedTimeMesh, alpha: float) -> np.ndarray:
    """Lower-triangular weights W[n, j] = w_nj for 1 <= j <= n <= n_steps."""
    nt = tmesh.n_steps
    W = np.zeros((nt + 1, nt + 1))
    for n in range(1, nt + 1):
        W[n, 1: n + 1] = history_weights(tmesh, alpha, n)
    return W


def g_uniform(j, alpha: float):
    """Toeplitz generator of the uniform-mesh weights."""
    j = np.asarray(j, dtype=float)
    e = 2.0 - alpha
    return (j + 1.0) ** e - 2.0 * j ** e + np.maximum(j - 1.0, 0.0) ** e


# ---------------------------------------------------------------------------
# exponential-sum surrogate of the kernel w_{1-a}(t) = t^(-a)/Gamma(1-a)

@dataclass(frozen=True)
class ExpSumKernel:
    alpha: float
    nodes: np.ndarray
    weights: np.ndarray
    t_min: float
    t_max: float
    rel_err: float

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-np.outer(t, self.nodes)) @ self.weights


def exp_sum_kernel(alpha: float, t_min: float, t_max: float, eps: float,
                   max_terms: int = 4000) -> ExpSumKernel:
    """Approximate w_{1-a}(t) by sum_i w_i exp(-s_i t), uniformly relative on
    [t_min, t_max].

    Trapezoidal discretisation of t^(-a) = sin(pi a)/pi * int e^(a x)
    exp(-t e^x) dx after s = e^x; the step is halved and the window widened
    until a geometric check grid meets eps/2.
    """
    if eps <= 0 or not 0 < alpha < 1 or not 0 < t_min < t_max:
        raise ConfigurationError("invalid exponential-sum parameters")
    # Gamma(a) Gamma(1-a) = pi / sin(pi a) turns the Laplace-integral
    # representation of t^(-a) into the kernel w_{1-a} with this prefactor
    pref = math.sin(math.pi * alpha) / math.pi
    # check grid: ~24 points per decade of t
    n_check = max(48, int(24 * math.log10(t_max / t_min)) + 2)
    tc = np.geomspace(t_min, t_max, n_check)
    target = tc ** (-alpha) / gamma_fn(1.0 - alpha)
    h = 1.0
    pad = 2.0
    while True:
        x_lo = (math.log(eps * alpha / 8.0) + math.log(t_max) * alpha) / alpha - pad
        x_hi = math.log((math.log(8.0 / eps) + 40.0) / t_min) + pad
        x = np.arange(x_lo, x_hi + h, h)
        if x.size > max_terms:
            raise ToleranceError(
                f"exponential sum needs more than {max_terms} terms for eps={eps}")
        nodes = np.exp(x)
        weights = pref * h * nodes ** alpha
        approx = np.exp(-np.outer(tc, nodes)) @ weights
        rel = float(np.max(np.abs(approx - target) / target))
        if rel <= 0.5 * eps:
            return ExpSumKernel(alpha=alpha, nodes=nodes, weights=weights,
                                t_min=t_min, t_max=t_max, rel_err=rel)
        h *= 0.5
        pad += 1.0


def _em1_over(x):
    """(1 - exp(-x)) / x, accurate near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-8
    out[small] = 1.0 - 0.5 * x[small]
    out[~small] = -np.expm1(-x[~small]) / x[~small]
    return out


def fast_history_apply(tmesh: GradedTimeMesh, alpha: float, n: int,
                       mv_history: np.ndarray, eps: float,
                       kernel: ExpSumKernel | None = None) -> np.ndarray:
    """History sum sum_{j<n} w_nj * mv_history[j-1] via the exponential sum.

    The adjacent term j = n-1 (where t - s can vanish) is added directly;
    the far field uses the surrogate, valid because its gaps are at least
    one time step.  With n <= 2 there is no far field and the result is the
    exact direct sum.
    """
    mv = np.asarray(mv_history, dtype=float)
    if mv.shape[0] < n - 1:
        raise ConfigurationError("history array shorter than n-1 entries")
    row = history_weights(tmesh, alpha, n)
    if n <= 2:
        return row[: n - 1] @ mv[: n - 1] if n > 1 else np.zeros(mv.shape[-1])
    if kernel is None:
        kernel = exp_sum_kernel(alpha, float(tmesh.dt.min()), tmesh.T, eps)
    s, w = kernel.nodes, kernel.weights
    t, dt = tmesh.t, tmesh.dt
    tau_n = dt[n - 1]
    a_n = _em1_over(s * tau_n)
    j = np.arange(1, n - 1)
    beta = _em1_over(np.outer(s, dt[j - 1]))                  # (K, n-2)
    decay = np.exp(-np.outer(s, t[n - 1] - t[j]))             # (K, n-2)
    far = (w * a_n) @ ((beta * decay) @ mv[: n - 2])
    return far + row[n - 2] * mv[n - 2]


# ---------------------------------------------------------------------------
# trajectory solver

@dataclass
class SolutionTrajectory:
    """Per-level P1 coefficients, piecewise linear in time between levels."""

    tmesh: GradedTimeMesh
    u: np.ndarray  # (n_steps + 1, d_h)

    def functional_series(self, weights: np.ndarray) -> np.ndarray:
        return self.u @ weights


def _pcg(A, b, precond_solve, mass, tol, maxiter=1000):
    """Conjugate gradients with an SPD preconditioner; stopping in the M-norm."""
    x = np.zeros_like(b)
    r = b.copy()
    norm0 = math.sqrt(max(r @ (mass @ r), 0.0))
    if norm0 == 0.0:
        return x
    z = precond_solve(r)
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if math.sqrt(max(r @ (mass @ r), 0.0)) <= tol * norm0:
            return x
        z = precond_solve(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = math.sqrt(max(r @ (mass @ r), 0.0)) / norm0
    raise SolverError(f"PCG did not converge: relative M-norm residual {res:.3e}")


class TrajectorySolver:
    """Solves trajectories for many parameter vectors over shared discretisations.

    Everything independent of y (mass matrix, convolution weights, loads,
    functional weights, preconditioners at y = 0) is precomputed once; the
    object is then read-only and may be shared across worker threads.
    """

    def __init__(self, mesh, field, tmesh: GradedTimeMesh, alpha: float,
                 f, g, grad_g, method: str = "auto", fast_history: bool = False,
                 fast_eps: float = 1e-8, cg_tol: float = 1e-10):
        if not 0.0 < alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        self.mesh = mesh
        self.field = field
        self.tmesh = tmesh
        self.alpha = alpha
        self.g = g
        self.grad_g = grad_g
        self.mass = assemble_mass(mesh)
        self.assembler = StiffnessAssembler(mesh, field)
        self.weights = weight_matrix(tmesh, alpha)
        t = tmesh.t
        self.loads = np.array([load_vector(mesh, f, t[n - 1], t[n])
                               for n in range(1, tmesh.n_steps + 1)])
        self.phi = phi_integrals(mesh)
        if method == "auto":
            method = "pcg" if self.mass.shape[0] > 4000 else "direct"
        if method not in ("direct", "pcg"):
            raise ConfigurationError(f"unknown solver method {method!r}")
        self.method = method
        self.cg_tol = cg_tol
        self.fast_history = fast_history
        self.kernel = None
        if fast_history and tmesh.n_steps >= 3:
            self.kernel = exp_sum_kernel(alpha, float(tmesh.dt.min()), tmesh.T, fast_eps)
        if method == "pcg":
            self._build_preconditioners()

    def _build_preconditioners(self):
        """Sparse factors of w_nn(tau-hat) M + D(0)/2 on a decade grid of steps."""
        d0 = self.assembler.matrix(np.zeros(0))
        dt = self.tmesh.dt
        lo = math.floor(math.log10(dt.min()))
        hi = math.ceil(math.log10(dt.max()))
        self._precond_taus = np.array([10.0 ** l for l in range(lo, hi + 1)])
        self._precond = []
        for th in self._precond_taus:
            s0 = float(_omega3(th, self.alpha)) / th ** 2 * self.mass + 0.5 * d0
            self._precond.append(spla.splu(s0.tocsc()))

    def solve(self, y) -> SolutionTrajectory:
        mesh, tmesh = self.mesh, self.tmesh
        nt = tmesh.n_steps
        d = self.mass.shape[0]
        D = self.assembler.matrix(y)
        rhs0 = self.assembler.ritz_rhs(y, self.grad_g)
        u0 = spla.spsolve(D.tocsc(), rhs0)
        u = np.empty((nt + 1, d))
        u[0] = u0
        mv = np.empty((nt, d))
        W = self.weights
        fast = self.kernel is not None
        if fast:
            s, kw = self.kernel.nodes, self.kernel.weights
            H = np.zeros((s.size, d))
        for n in range(1, nt + 1):
            tau_n = tmesh.dt[n - 1]
            S = W[n, n] * self.mass + 0.5 * D
            if n == 1:
                hist = np.zeros(d)
            elif fast:
                a_n = _em1_over(s * tau_n)
                hist = (kw * a_n) @ H + W[n, n - 1] * mv[n - 2]
            else:
                hist = W[n, 1:n] @ mv[: n - 1]
            rhs = self.loads[n - 1] - D @ u[n - 1] - hist
            if self.method == "direct":
                v = spla.spsolve(S.tocsc(), rhs)
            else:
                k = int(np.argmin(np.abs(self._precond_taus - tau_n)))
                lu = self._precond[k]
                v = _pcg(S, rhs, lu.solve, self.mass, self.cg_tol)
            u[n] = u[n - 1] + v
            mv[n - 1] = self.mass @ v
            if fast and n >= 2:
                # fold V^{n-1} into the far field and decay to the next level
                beta = _em1_over(s * tmesh.dt[n - 2])
                H = np.exp(-s * tau_n)[:, None] * (H + beta[:, None] * mv[n - 2])
        return SolutionTrajectory(tmesh=tmesh, u=u)

    def functional_series(self, y) -> np.ndarray:
        return self.solve(y).functional_series(self.phi)


def solve_trajectory(field, y, mesh, tmesh: GradedTimeMesh, alpha: float,
                     f, g, grad_g, **kwargs) -> SolutionTrajectory:
    solver = TrajectorySolver(mesh, field, tmesh, alpha, f, g, grad_g, **kwargs)
    return solver.solve(np.asarray(y, dtype=float))


def l2J_norm(series: np.ndarray, tmesh: GradedTimeMesh, mass=None) -> float:
    """L2-in-time norm of the piecewise-linear reconstruction of the series.

    For scalars this is (sum_n tau_n (a^2 + ab + b^2)/3)^(1/2); for per-level
    coefficient vectors the spatial norm is taken in the mass inner product
    (or the Euclidean one when mass is None).
    """
    series = np.asarray(series, dtype=float)
    if series.shape[0] != tmesh.n_steps + 1:
        raise ConfigurationError("series must have one entry per time level")
    if series.ndim == 1:
        q = series * series
        c = series[:-1] * series[1:]
    else:
        ms = (mass @ series.T).T if mass is not None else series
        q = np.einsum("nd,nd->n", series, ms)
        c = np.einsum("nd,nd->n", series[:-1], ms[1:])
    val = np.sum(tmesh.dt * (q[:-1] + c + q[1:]) / 3.0)
    return math.sqrt(max(val, 0.0))
