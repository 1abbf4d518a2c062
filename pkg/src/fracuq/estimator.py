"""Expected values of solution functionals by equal-weight QMC sampling.

Ties together the random field, the interlaced polynomial lattice points,
and the space-time solver: E_{z,N,h}(t_n) is the average of L(u_h(t_n, y))
over the N centered QMC points y in (-1/2, 1/2)^z, with one trajectory
solve per point.  Also provides the convergence-table, truncation-decay
and space-time refinement studies built on the same machinery.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigurationError, FracUQError, SolverError
from .fem import (TriMesh, assemble_mass, prolong_structured,
                  triangulate_unit_square)
from .field import SineRandomField
from .qmc import (InterlacedLatticeRule, PointSet, cbc_rule,
                  digital_shift_half, shift_to_centered)
from .tfrac import GradedTimeMesh, TrajectorySolver, graded_mesh, l2J_norm

__all__ = [
    "RunConfig",
    "ExpectedValueSeries",
    "ConvergenceRow",
    "TruncationStudy",
    "RefinementStudy",
    "example_initial",
    "example_initial_gradient",
    "default_qmc_weights",
    "build_solver",
    "sample_points",
    "estimate",
    "convergence_table",
    "truncation_study",
    "spacetime_refinement_study",
]


def example_initial(x1, x2):
    """Initial profile 144 x1^2 (1-x1) x2^2 (1-x2), normalised so its
    average over the unit square is 1."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return 144.0 * x1 ** 2 * (1.0 - x1) * x2 ** 2 * (1.0 - x2)


def example_initial_gradient(x1, x2):
    """Gradient of :func:`example_initial`."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    gx = 144.0 * (2.0 * x1 - 3.0 * x1 ** 2) * x2 ** 2 * (1.0 - x2)
    gy = 144.0 * x1 ** 2 * (1.0 - x1) * (2.0 * x2 - 3.0 * x2 ** 2)
    return gx, gy


def default_qmc_weights(field: SineRandomField, z: int) -> np.ndarray:
    """Coordinate weights b_j = sqrt(2) ||psi_j|| / kappa_ref for the CBC search.

    The reference diffusivity is the declared lower bound when positive;
    otherwise the minimum of the mean field kappa0 over the square is used
    (the example field's worst-case bound is slightly negative).
    """
    kmin = field.declared_bounds[0]
    if kmin <= 0.0:
        g = np.linspace(0.0, 1.0, 33)
        X1, X2 = np.meshgrid(g, g, indexing="ij")
        kmin = float(field.kappa0(X1.ravel(), X2.ravel()).min())
    if kmin <= 0.0:
        raise ConfigurationError("cannot derive a positive reference diffusivity")
    return math.sqrt(2.0) / kmin * field.sup_norms[:z]


@dataclass
class RunConfig:
    """All ingredients of one estimation run.

    The spatial mesh is either a structured ``n_div`` subdivision of the
    unit square or an explicit :class:`TriMesh`; the generating vector is
    either supplied as ``rule`` or built by CBC with the default weights.
    ``gamma`` defaults to the usual grading 2/alpha.
    """

    alpha: float
    n_steps: int
    field: SineRandomField
    z: int
    m: int
    T: float = 1.0
    gamma: float | None = None
    n_div: int | None = None
    mesh: TriMesh | None = None
    b: int = 2
    beta: int = 3
    rule: InterlacedLatticeRule | None = None
    f: object = 1.0
    g: object = None
    grad_g: object = None
    method: str = "auto"
    fast_history: bool = False
    fast_eps: float = 1e-8
    cg_tol: float = 1e-10
    threads: int = 1
    shift: str = "none"
    qmc_weights: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.n_steps < 1 or self.m < 0 or self.T <= 0.0:
            raise ConfigurationError("n_steps, m, T must be positive")
        if self.z < 0 or self.z > len(self.field):
            raise ConfigurationError(
                f"truncation z={self.z} exceeds the field basis ({len(self.field)})")
        if (self.mesh is None) == (self.n_div is None):
            raise ConfigurationError("exactly one of n_div and mesh must be set")
        if self.gamma is None:
            self.gamma = 2.0 / self.alpha
        if self.g is None:
            self.g = example_initial
            self.grad_g = example_initial_gradient
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.rule is not None:
            if self.rule.z < self.z:
                raise ConfigurationError(
                    f"generating vector covers {self.rule.z} coordinates, need {self.z}")
            if (self.rule.b, self.rule.m, self.rule.beta) != (self.b, self.m, self.beta):
                raise ConfigurationError("generating vector (b, m, beta) mismatch")

    @property
    def n_samples(self) -> int:
        return self.b ** self.m

    def space_mesh(self) -> TriMesh:
        if self.mesh is None:
            self.mesh = triangulate_unit_square(self.n_div)
        return self.mesh

    def time_mesh(self) -> GradedTimeMesh:
        return graded_mesh(self.T, self.n_steps, self.gamma)

    def cbc_weights(self, z: int | None = None) -> np.ndarray:
        z = self.z if z is None else z
        if self.qmc_weights is not None:
            w = np.asarray(self.qmc_weights, dtype=float)
            if w.size < z:
                raise ConfigurationError(
                    f"qmc_weights covers {w.size} coordinates, need {z}")
            return w[:z]
        return default_qmc_weights(self.field, z)

    def qmc_rule(self) -> InterlacedLatticeRule:
        if self.rule is None:
            self.rule = cbc_rule(self.b, self.m, self.beta, self.z,
                                 self.cbc_weights())
        return self.rule


@dataclass
class ExpectedValueSeries:
    """QMC mean and spread of L(u_h(t_n)) at every time level."""

    t: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_samples: int
    z: int
    h: float
    n_steps: int


@dataclass
class ConvergenceRow:
    n_samples: int
    value_T: float
    err_T: float
    rate_T: float
    err_L2J: float
    rate_L2J: float


@dataclass
class TruncationStudy:
    z: np.ndarray
    err_T: np.ndarray
    value_ref: float
    z_ref: int
    slope: float


@dataclass
class RefinementStudy:
    n_div: list
    n_steps: list
    errors: np.ndarray      # L2(J, Omega) error per coarse level vs finest
    ratios: np.ndarray      # consecutive error ratios
    orders: np.ndarray      # log2 of the ratios


def build_solver(config: RunConfig) -> TrajectorySolver:
    return TrajectorySolver(
        config.space_mesh(), config.field, config.time_mesh(), config.alpha,
        config.f, config.g, config.grad_g, method=config.method,
        fast_history=config.fast_history, fast_eps=config.fast_eps,
        cg_tol=config.cg_tol)


def sample_points(config: RunConfig) -> np.ndarray:
    """Centered QMC points, shape (N, z).

    Plain centering (x - 1/2) by default, so point 0 is the corner
    (-1/2, ..., -1/2); ``shift="digital-half"`` additionally applies a
    deterministic digital shift that moves point 0 to the centre, useful
    for fields whose diffusivity degrades near the parameter-box corner.

    m = 0 is the single-point rule: just the origin of [0,1)^z; z = 0 (a
    deterministic field) repeats the empty parameter vector N times.
    """
    if config.z == 0:
        return np.zeros((config.n_samples, 0))
    if config.m == 0:
        ps = PointSet(np.zeros((1, config.z), dtype=np.int64), config.b, 1,
                      {"kind": "single"})
        if config.shift == "digital-half":
            ps = digital_shift_half(ps)
        elif config.shift != "none":
            raise ConfigurationError(f"unknown shift mode {config.shift!r}")
        return shift_to_centered(ps)
    return config.qmc_rule().centered_points(shift=config.shift)[:, : config.z]


def _functional_samples(solver: TrajectorySolver, points: np.ndarray,
                        threads: int) -> np.ndarray:
    """L(u_h(t_n, y_j)) for every sample, shape (N, n_steps + 1).

    Results land in a preallocated slot per sample index, so the later
    reduction order is independent of the thread count.
    """
    n = points.shape[0]
    out = np.empty((n, solver.tmesh.n_steps + 1))
    failures = []

    def work(j):
        try:
            out[j] = solver.functional_series(points[j])
        except FracUQError as exc:
            failures.append((j, exc))

    if threads <= 1:
        for j in range(n):
            work(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n)))
    if failures:
        failures.sort(key=lambda pair: pair[0])
        detail = "; ".join(f"sample {j}: {exc}" for j, exc in failures[:5])
        raise SolverError(f"{len(failures)} of {n} trajectory solves failed ({detail})")
    return out


def _reduce_series(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight mean and unbiased std over the sample axis (fixed order)."""
    n = values.shape[0]
    mean = np.sum(values, axis=0) / n
    if n > 1:
        std = np.sqrt(np.sum((values - mean) ** 2, axis=0) / (n - 1))
    else:
        std = np.zeros_like(mean)
    return mean, std


def estimate(config: RunConfig, solver: TrajectorySolver | None = None) -> ExpectedValueSeries:
    """QMC estimate of E(L(u(t_n))) with per-level standard deviations."""
    if solver is None:
        solver = build_solver(config)
    points = sample_points(config)
    values = _functional_samples(solver, points, config.threads)
    mean, std = _reduce_series(values)
    return ExpectedValueSeries(
        t=solver.tmesh.t.copy(), mean=mean, std=std,
        n_samples=points.shape[0], z=config.z, h=config.space_mesh().h,
        n_steps=config.n_steps)


def _rate(err_prev: float, err_cur: float, factor: float) -> float:
    if err_prev > 0.0 and err_cur > 0.0:
        return math.log(err_prev / err_cur) / math.log(factor)
    return math.nan


def convergence_table(config: RunConfig, N_list, N_ref: int) -> list[ConvergenceRow]:
    """Errors and observed rates of the N-point estimates against an
    N_ref-point reference sharing the same mesh, time grid and truncation."""
    N_list = [int(n) for n in N_list]
    if N_ref <= max(N_list):
        raise ConfigurationError("N_ref must exceed every entry of N_list")
    solver = build_solver(config)
    tmesh = solver.tmesh
    series = {}
    gammas = config.cbc_weights()
    for n in sorted(set(N_list + [N_ref])):
        m = round(math.log(n) / math.log(config.b))
        if config.b ** m != n:
            raise ConfigurationError(f"N={n} is not a power of the base b={config.b}")
        if config.rule is not None and config.rule.m == m:
            rule = config.rule
        else:
            rule = cbc_rule(config.b, m, config.beta, config.z, gammas)
        points = rule.centered_points(shift=config.shift)[:, : config.z]
        values = _functional_samples(solver, points, config.threads)
        series[n] = _reduce_series(values)[0]
    ref = series[N_ref]
    rows = []
    prev = None
    for n in sorted(N_list):
        mean = series[n]
        err_T = abs(mean[-1] - ref[-1])
        err_J = l2J_norm(mean - ref, tmesh)
        if prev is None:
            rate_T = rate_J = math.nan
        else:
            factor = n / prev.n_samples
            rate_T = _rate(prev.err_T, err_T, factor)
            rate_J = _rate(prev.err_L2J, err_J, factor)
        prev = ConvergenceRow(n_samples=n, value_T=float(mean[-1]), err_T=err_T,
                              rate_T=rate_T, err_L2J=err_J, rate_L2J=rate_J)
        rows.append(prev)
    return rows


def truncation_study(config: RunConfig, z_list, z_ref: int) -> TruncationStudy:
    """Decay of |E_{z,N,h}(T) - E_{z_ref,N,h}(T)| as the truncation grows.

    A single point set in z_ref coordinates is used throughout; smaller z
    simply drops the trailing coordinates, so the comparison isolates the
    truncation error.
    """
    z_list = sorted(int(z) for z in z_list)
    if z_ref <= max(z_list):
        raise ConfigurationError("z_ref must exceed every entry of z_list")
    if z_ref > len(config.field):
        raise ConfigurationError("z_ref exceeds the field basis length")
    gammas = config.cbc_weights(z_ref)
    rule = config.rule
    if rule is None or rule.z < z_ref:
        rule = cbc_rule(config.b, config.m, config.beta, z_ref, gammas)
    points = rule.centered_points(shift=config.shift)[:, :z_ref]
    solver = build_solver(config)
    values_T = {}
    for z in z_list + [z_ref]:
        values = _functional_samples(solver, points[:, :z], config.threads)
        values_T[z] = float(np.sum(values[:, -1]) / values.shape[0])
    ref = values_T[z_ref]
    err = np.array([abs(values_T[z] - ref) for z in z_list])
    positive = err > 0
    if np.count_nonzero(positive) >= 2:
        slope = float(np.polyfit(np.log(np.array(z_list, dtype=float)[positive]),
                                 np.log(err[positive]), 1)[0])
    else:
        slope = math.nan
    return TruncationStudy(z=np.array(z_list), err_T=err, value_ref=ref,
                           z_ref=z_ref, slope=slope)


def _interp_levels(t_fine: np.ndarray, t_coarse: np.ndarray,
                   u_coarse: np.ndarray) -> np.ndarray:
    """Piecewise-linear-in-time values of a coarse trajectory at fine levels."""
    idx = np.searchsorted(t_coarse, t_fine, side="left")
    idx = np.clip(idx, 1, t_coarse.size - 1)
    t0 = t_coarse[idx - 1]
    t1 = t_coarse[idx]
    w = np.clip((t_fine - t0) / (t1 - t0), 0.0, 1.0)
    return (1.0 - w)[:, None] * u_coarse[idx - 1] + w[:, None] * u_coarse[idx]


def spacetime_refinement_study(config: RunConfig, levels: int = 3,
                               y=None) -> RefinementStudy:
    """L2(J, Omega) errors under simultaneous halving of h and the time step.

    The deterministic trajectory (default y = 0) is solved on ``levels``
    nested structured meshes, doubling n_div and n_steps per level; the
    finest level is the reference.  Coarse solutions are prolonged exactly
    onto the fine P1 space and interpolated in time (the graded levels are
    nested under doubling), so the reported error is purely discretisation.
    """
    if config.n_div is None:
        raise ConfigurationError("the refinement study requires a structured n_div mesh")
    if levels < 2:
        raise ConfigurationError("need at least two levels")
    if y is None:
        y = np.zeros(0)
    y = np.asarray(y, dtype=float)
    n_divs = [config.n_div * 2 ** i for i in range(levels)]
    n_steps = [config.n_steps * 2 ** i for i in range(levels)]
    trajectories = []
    for nd, nt in zip(n_divs, n_steps):
        mesh = triangulate_unit_square(nd)
        tmesh = graded_mesh(config.T, nt, config.gamma)
        solver = TrajectorySolver(mesh, config.field, tmesh, config.alpha,
                                  config.f, config.g, config.grad_g,
                                  method=config.method, cg_tol=config.cg_tol)
        trajectories.append((mesh, tmesh, solver.solve(y).u))
    fine_mesh, fine_tmesh, u_ref = trajectories[-1]
    mass_fine = assemble_mass(fine_mesh)
    errors = []
    for i in range(levels - 1):
        mesh_i, tmesh_i, u_i = trajectories[i]
        in_space = np.stack([
            prolong_structured(row, n_divs[i], n_divs[-1]) for row in u_i])
        on_fine = _interp_levels(fine_tmesh.t, tmesh_i.t, in_space)
        errors.append(l2J_norm(u_ref - on_fine, fine_tmesh, mass=mass_fine))
    errors = np.array(errors)
    ratios = errors[:-1] / errors[1:] if errors.size > 1 else np.zeros(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(ratios) if ratios.size else np.zeros(0)
    return RefinementStudy(n_div=n_divs[:-1], n_steps=n_steps[:-1],
                           errors=errors, ratios=ratios, orders=orders)
