"""Guarded Galerkin hierarchy: level solves, condition tables, S-probe.

Each level solves the discrete residual system with damped Newton (colored
finite-difference Jacobian, Armijo line search on the residual merit).  The
competing operator is nonmonotone and admits spurious branches reachable from
a zero start, so cold starts walk a homotopy: a linear predictor seeds Newton
on the monotone core (the competing divergence term switched off), then the
competing term is ramped back to full strength.  Warm starts (prolongated
coarser solutions) go straight to Newton; load continuation remains as the
fallback when Newton stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .estimates import EstimateReport, compute_estimates
from .fespace import (DualVector, FeFunction, FeSpace, grad_norm_lp, pair,
                      prolongate, sup_norm)
from .mesh import build_mesh, refine
from .operators import (DEFAULT_REGULARIZATION, Problem, TruncatedWeight,
                        component_residuals, convection_pairing,
                        convection_residual, power_laplacian_pairing,
                        truncate_weight, weighted_p_pairing)

__all__ = [
    "SolveError",
    "SolverConfig",
    "ProblemOperator",
    "GuardRecord",
    "brouwer_guard",
    "LevelSolve",
    "solve_level",
    "HierarchyReport",
    "run_hierarchy",
    "SProbe",
    "condition_S_probe",
]


class SolveError(RuntimeError):
    """A level solve failed after Newton and every fallback."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 200
    continuation_steps: int = 10
    homotopy_steps: int = 4
    fd_step: float = 1e-7
    max_halvings: int = 40
    regularization: float = DEFAULT_REGULARIZATION


class ProblemOperator:
    """Residual map of the truncated operator on one space.

    `q_factor` scales the competing/cooperative divergence term and
    `load_factor` scales the convection term; both default to the full
    problem and exist for homotopy and continuation.
    """

    def __init__(self, problem: Problem, weight, space: FeSpace,
                 load_factor: float = 1.0, q_factor: float = 1.0,
                 eps: float = DEFAULT_REGULARIZATION):
        self.problem = problem
        self.weight = weight
        self.space = space
        self.load_factor = float(load_factor)
        self.q_factor = float(q_factor)
        self.eps = float(eps)
        self.properties = {"bounded": True, "continuous": True,
                           "coercive_on_ball": True}

    def residual(self, u: FeFunction) -> DualVector:
        p_part, q_part, f_part = component_residuals(
            self.problem, self.weight, u, self.eps)
        vals = (p_part.values
                + self.problem.q_sign * self.q_factor * q_part.values
                - self.load_factor * f_part.values)
        return DualVector(u.space, vals)

    def pairing(self, u: FeFunction, v: FeFunction) -> float:
        pr = self.problem
        return (weighted_p_pairing(self.weight, u, v, pr.p, self.eps)
                + pr.q_sign * self.q_factor
                * power_laplacian_pairing(u, v, pr.q, self.eps)
                - self.load_factor * convection_pairing(pr.convection, u, v))

    def q_scaled(self, kappa: float) -> "ProblemOperator":
        return ProblemOperator(self.problem, self.weight, self.space,
                               self.load_factor, kappa, self.eps)

    def load_scaled(self, tau: float) -> "ProblemOperator":
        return ProblemOperator(self.problem, self.weight, self.space,
                               tau, self.q_factor, self.eps)


# ---------------------------------------------------------------------------
# coercivity guard
# ---------------------------------------------------------------------------

@dataclass
class GuardRecord:
    initial_radius: float
    radius: float
    min_pairing: float
    samples: int
    doublings: int
    passed: bool

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (int, float, np.floating))
                    and not isinstance(v, bool) else v)
                for k, v in self.__dict__.items()}


def _sphere_directions(dim: int, samples: int, seed: int) -> np.ndarray:
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(samples)
    return ndtri(np.clip(pts, 1e-12, 1.0 - 1e-12))


def brouwer_guard(op: ProblemOperator, space: FeSpace, radius: float,
                  samples: int = 32, seed: int = 0,
                  max_doublings: int = 8) -> GuardRecord:
    """Sample <A(v), v> on the sphere ||grad v||_p = radius.

    A nonnegative minimum supports the zero-of-degree argument for a solution
    inside the ball; a negative minimum is data, answered by doubling the
    radius up to the cap and recording the outcome.
    """
    dirs = _sphere_directions(space.dim, samples, seed)
    p = op.problem.p
    r = float(radius)
    doublings = 0
    while True:
        worst = np.inf
        for row in dirs:
            v = FeFunction(space, row)
            scale = grad_norm_lp(v, p)
            if scale == 0.0:
                continue
            v = (r / scale) * v
            worst = min(worst, op.pairing(v, v))
        if worst >= 0.0 or doublings >= max_doublings:
            return GuardRecord(initial_radius=float(radius), radius=r,
                               min_pairing=float(worst), samples=samples,
                               doublings=doublings, passed=bool(worst >= 0.0))
        r *= 2.0
        doublings += 1


# ---------------------------------------------------------------------------
# Newton with colored finite-difference Jacobian
# ---------------------------------------------------------------------------

@dataclass
class _NewtonInfo:
    converged: bool
    iterations: int
    residual_sup: float
    message: str = ""


def _fd_jacobian(op, space: FeSpace, u: FeFunction, F: np.ndarray,
                 step: float) -> np.ndarray:
    colors, neighbors = space.dof_coloring()
    n = space.dim
    J = np.zeros((n, n))
    hs = step * np.maximum(1.0, np.abs(u.coeffs))
    for c in range(int(colors.max()) + 1):
        mask = colors == c
        pert = np.where(mask, hs, 0.0)
        Fp = op.residual(FeFunction(space, u.coeffs + pert)).values
        for j in np.flatnonzero(mask):
            rows = neighbors[j]
            J[rows, j] = (Fp[rows] - F[rows]) / hs[j]
    return J


def _newton(op, space: FeSpace, u0: FeFunction, cfg: SolverConfig) -> tuple:
    u = u0.copy()
    F = op.residual(u).values
    its = 0
    while True:
        res_sup = float(np.max(np.abs(F))) if F.size else 0.0
        if res_sup <= cfg.tolerance:
            return u, _NewtonInfo(True, its, res_sup)
        if its >= cfg.max_iterations:
            return u, _NewtonInfo(False, its, res_sup, "iteration cap")
        J = _fd_jacobian(op, space, u, F, cfg.fd_step)
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -F, rcond=None)[0]
        if not np.all(np.isfinite(delta)) or not np.any(delta):
            return u, _NewtonInfo(False, its, res_sup, "degenerate step")
        merit = float(np.linalg.norm(F))
        lam = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            trial = FeFunction(space, u.coeffs + lam * delta)
            Ft = op.residual(trial).values
            if float(np.linalg.norm(Ft)) <= (1.0 - 1e-4 * lam) * merit:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return u, _NewtonInfo(False, its, res_sup, "line search stalled")
        u, F = trial, Ft
        its += 1


def _linear_predictor(op: ProblemOperator, space: FeSpace) -> FeFunction:
    """Seed for the monotone core: solve a0 * stiffness = load at zero."""
    zero = FeFunction.zero(space)
    load = op.load_factor * convection_residual(op.problem.convection, zero).values
    if not np.any(load):
        return zero
    contrib = (np.einsum("cvd,cwd->cvw", space.grads, space.grads)
               * space.cell_measures[:, None, None])
    n = space.dim
    K = np.zeros((n, n))
    idx = space.cell_dofs
    for v in range(idx.shape[1]):
        for w in range(idx.shape[1]):
            rows, cols = idx[:, v], idx[:, w]
            mask = (rows >= 0) & (cols >= 0)
            np.add.at(K, (rows[mask], cols[mask]), contrib[mask, v, w])
    K *= op.weight.lower_bound
    try:
        coeffs = np.linalg.solve(K, load)
    except np.linalg.LinAlgError:
        coeffs = np.linalg.lstsq(K, load, rcond=None)[0]
    return FeFunction(space, coeffs)


def _cold_start(op: ProblemOperator, space: FeSpace, cfg: SolverConfig):
    u = _linear_predictor(op, space)
    total = 0
    info = _NewtonInfo(False, 0, np.inf, "no homotopy stage ran")
    for kappa in np.linspace(0.0, 1.0, cfg.homotopy_steps + 1):
        u, info = _newton(op.q_scaled(float(kappa)), space, u, cfg)
        total += info.iterations
        if not info.converged:
            break
    return u, info, total


def _load_continuation(op: ProblemOperator, space: FeSpace, cfg: SolverConfig):
    u = FeFunction.zero(space)
    total = 0
    info = _NewtonInfo(False, 0, np.inf, "no continuation step ran")
    for tau in np.linspace(0.0, 1.0, cfg.continuation_steps + 1)[1:]:
        u, info = _newton(op.load_scaled(float(tau)), space, u, cfg)
        total += info.iterations
        if not info.converged:
            break
    return u, info, total


@dataclass
class LevelSolve:
    level: int
    dim: int
    solution: FeFunction
    residual_sup: float
    iterations: int
    path: str
    converged: bool
    guard: Optional[GuardRecord] = None

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "dim": self.dim,
            "residual_sup": float(self.residual_sup),
            "iterations": self.iterations,
            "path": self.path,
            "converged": self.converged,
            "guard": self.guard.to_dict() if self.guard else None,
        }


def solve_level(op: ProblemOperator, space: FeSpace,
                cfg: Optional[SolverConfig] = None,
                warm: Optional[FeFunction] = None,
                guard_radius: Optional[float] = None,
                guard_samples: int = 32, seed: int = 0) -> LevelSolve:
    """Solve one Galerkin level; failure is an exception, a failed guard is data."""
    cfg = cfg or SolverConfig()
    guard = None
    if guard_radius is not None:
        guard = brouwer_guard(op, space, guard_radius, guard_samples, seed)
    if warm is not None:
        u, info = _newton(op, space, warm, cfg)
        total, path = info.iterations, "newton"
    else:
        u, info, total = _cold_start(op, space, cfg)
        path = "competition-ramp"
    if not info.converged:
        u, info, extra = _load_continuation(op, space, cfg)
        total += extra
        path = "load-continuation"
    if not info.converged:
        raise SolveError(
            f"level {space.mesh.level} failed: {info.message} "
            f"(residual sup {info.residual_sup:.3e})",
            {"level": space.mesh.level, "path": path,
             "residual_sup": info.residual_sup, "iterations": total})
    return LevelSolve(level=space.mesh.level, dim=space.dim, solution=u,
                      residual_sup=info.residual_sup, iterations=total,
                      path=path, converged=True, guard=guard)


# ---------------------------------------------------------------------------
# hierarchy driver
# ---------------------------------------------------------------------------

@dataclass
class HierarchyReport:
    estimate: EstimateReport
    truncation_radius: float
    guard_radius: float
    solver_tolerance: float
    seed: int
    levels: List[LevelSolve] = field(default_factory=list)
    test_count: int = 0
    cond_b: List[List[float]] = field(default_factory=list)
    pair_un: List[float] = field(default_factory=list)
    cond_c: List[float] = field(default_factory=list)
    cond_c_alt: List[float] = field(default_factory=list)
    cond_cprime: List[float] = field(default_factory=list)
    convection_pairs: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    sup_norms: List[float] = field(default_factory=list)
    gaps: List[float] = field(default_factory=list)
    within_grad_bound: List[bool] = field(default_factory=list)
    within_sup_bound: List[bool] = field(default_factory=list)
    failed_level: Optional[int] = None
    failure_message: str = ""
    problem: Optional[Problem] = None
    weight: Optional[TruncatedWeight] = None
    spaces: List[FeSpace] = field(default_factory=list)

    @property
    def solutions(self) -> List[FeFunction]:
        return [lv.solution for lv in self.levels]

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_dict(),
            "truncation_radius": float(self.truncation_radius),
            "guard_radius": float(self.guard_radius),
            "solver_tolerance": float(self.solver_tolerance),
            "seed": self.seed,
            "levels": [lv.to_dict() for lv in self.levels],
            "test_count": self.test_count,
            "cond_b": [[float(x) for x in row] for row in self.cond_b],
            "pair_un": [float(x) for x in self.pair_un],
            "cond_c": [float(x) for x in self.cond_c],
            "cond_c_alt": [float(x) for x in self.cond_c_alt],
            "cond_cprime": [float(x) for x in self.cond_cprime],
            "convection_pairs": [float(x) for x in self.convection_pairs],
            "grad_norms": [float(x) for x in self.grad_norms],
            "sup_norms": [float(x) for x in self.sup_norms],
            "gaps": [float(x) for x in self.gaps],
            "within_grad_bound": list(self.within_grad_bound),
            "within_sup_bound": list(self.within_sup_bound),
            "failed_level": self.failed_level,
            "failure_message": self.failure_message,
        }


def _test_set(space0: FeSpace, extra: int, seed: int) -> List[FeFunction]:
    """Full coarse basis plus a few fixed random coarse functions."""
    out = [FeFunction(space0, row) for row in np.eye(space0.dim)]
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        coeffs = rng.standard_normal(space0.dim)
        v = FeFunction(space0, coeffs)
        scale = grad_norm_lp(v, 2.0)
        if scale > 0.0:
            v = (1.0 / scale) * v
        out.append(v)
    return out


def run_hierarchy(problem: Problem, base_cells, levels: int,
                  cfg: Optional[SolverConfig] = None,
                  convention: str = "standard", seed: int = 0,
                  extra_tests: int = 5, guard_samples: int = 32,
                  estimate: Optional[EstimateReport] = None) -> HierarchyReport:
    """Solve a nested hierarchy and tabulate the generalized-solution data.

    The finest solved level stands proxy for the weak limit in every gap and
    pairing table; tables are filled for however many levels solved, and a
    failed level leaves `failed_level` set instead of raising.
    """
    if levels < 2:
        raise ValueError("a hierarchy needs at least 2 levels")
    cfg = cfg or SolverConfig()
    meshes = [build_mesh(problem.domain, base_cells)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    spaces = [FeSpace(m) for m in meshes]

    if estimate is None:
        estimate = compute_estimates(problem, spaces[0], convention, seed)
    weight = truncate_weight(problem.weight, estimate.sup_radius)
    # a hair above the psi-root keeps the sampled pairing clear of rounding
    guard_radius = estimate.grad_radius * (1.0 + 1e-9)

    report = HierarchyReport(
        estimate=estimate, truncation_radius=weight.radius,
        guard_radius=guard_radius, solver_tolerance=cfg.tolerance,
        seed=seed, problem=problem, weight=weight, spaces=spaces)

    ops = [ProblemOperator(problem, weight, sp, eps=cfg.regularization)
           for sp in spaces]
    warm = None
    for n, (op, sp) in enumerate(zip(ops, spaces)):
        try:
            lv = solve_level(op, sp, cfg, warm=warm, guard_radius=guard_radius,
                             guard_samples=guard_samples, seed=seed)
        except SolveError as err:
            report.failed_level = n
            report.failure_message = str(err)
            break
        report.levels.append(lv)
        if n + 1 < len(spaces):
            warm = prolongate(lv.solution, spaces[n + 1])

    solved = report.levels
    if not solved:
        return report

    tests = _test_set(spaces[0], extra_tests, seed)
    report.test_count = len(tests)
    for n, lv in enumerate(solved):
        op, sp, u = ops[n], spaces[n], lv.solution
        F = op.residual(u)
        report.cond_b.append([pair(F, prolongate(v, sp)) for v in tests])
        report.pair_un.append(pair(F, u))
        report.grad_norms.append(grad_norm_lp(u, problem.p))
        report.sup_norms.append(sup_norm(u))
        slack = 1.0 + 1e-12
        report.within_grad_bound.append(
            report.grad_norms[-1] <= estimate.grad_radius * slack)
        report.within_sup_bound.append(
            report.sup_norms[-1] <= estimate.sup_radius * slack)

    fine_space = spaces[len(solved) - 1]
    fine_op = ops[len(solved) - 1]
    u_star = solved[-1].solution
    for lv in solved:
        u_fine = prolongate(lv.solution, fine_space)
        diff = u_fine - u_star
        p_d, q_d, f_d = component_residuals(problem, weight, u_fine,
                                            cfg.regularization)
        principal_pq = DualVector(
            fine_space, p_d.values + problem.q_sign * q_d.values)
        report.cond_c.append(fine_op.pairing(u_fine, diff))
        report.cond_c_alt.append(pair(principal_pq - f_d, diff))
        report.cond_cprime.append(pair(principal_pq, diff))
        report.convection_pairs.append(pair(f_d, diff))
        report.gaps.append(grad_norm_lp(diff, problem.p))
    return report


# ---------------------------------------------------------------------------
# condition (S) probe
# ---------------------------------------------------------------------------

@dataclass
class SProbe:
    classification: str
    pairings_vanish: bool
    gradients_contract: bool
    final_pairing: float
    final_gap: float
    gap_ratio: float

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "pairings_vanish": self.pairings_vanish,
            "gradients_contract": self.gradients_contract,
            "final_pairing": float(self.final_pairing),
            "final_gap": float(self.final_gap),
            "gap_ratio": float(self.gap_ratio),
        }


def condition_S_probe(report: HierarchyReport, pair_tol: float = 1e-6,
                      contract_ratio: float = 0.5) -> SProbe:
    """Observe, never assert: do the (c)-pairings vanish and do the gradient
    gaps contract toward the proxy limit?

    Strong convergence of competing sequences is an open question, so the
    probe only reports the observed classification.
    """
    if not report.cond_c or not report.gaps:
        return SProbe("inconclusive", False, False, np.nan, np.nan, np.nan)
    scale = max(1.0, report.grad_norms[-1] if report.grad_norms else 1.0)
    final_pairing = report.cond_c[-1]
    vanish = abs(final_pairing) <= pair_tol * scale
    gaps = report.gaps
    tiny = 1e-14 * scale
    if all(g <= tiny for g in gaps):
        contract = True
        ratio = 0.0
    elif len(gaps) >= 3 and gaps[0] > 0.0:
        decreasing = all(gaps[i + 1] < gaps[i] + tiny for i in range(len(gaps) - 1))
        ratio = gaps[-2] / gaps[0]
        contract = decreasing and ratio <= contract_ratio
    else:
        contract = False
        ratio = np.nan
    if vanish and contract:
        cls = "s-consistent: candidate weak solution"
    elif vanish:
        cls = "generalized only: pairings vanish without gradient contraction"
    else:
        cls = "inconclusive"
    return SProbe(cls, vanish, contract, final_pairing,
                  gaps[-2] if len(gaps) >= 2 else gaps[-1], ratio)
