"""Weighted (p,q)-divergence operators with convection on P1 spaces.

The residual of the truncated operator against every basis hat is

    F_i(u) = int g_R(u) |grad u|^{p-2} grad u . grad phi_i
             -/+ int |grad u|^{q-2} grad u . grad phi_i
             - int f(x, u, grad u) phi_i

with '-' on the q-term for the competing variant and '+' for the cooperative
one.  Splitting into a principal part and a secondary part follows the same
convention: residual = principal - secondary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .fespace import (DualVector, FeFunction, FeSpace, cell_gradients,
                      values_at_qp)
from .mesh import Domain

__all__ = [
    "AssemblyError",
    "HypothesisViolation",
    "WeightFunction",
    "TruncatedWeight",
    "truncate_weight",
    "constant_weight",
    "quadratic_weight",
    "GrowthH2",
    "SignH3",
    "SignH3a",
    "GrowthH4",
    "ConvectionFamily",
    "zero_convection",
    "constant_convection",
    "saturating_convection",
    "adversarial_convection",
    "eval_convection",
    "Problem",
    "weighted_p_residual",
    "power_laplacian_residual",
    "convection_residual",
    "weighted_p_pairing",
    "power_laplacian_pairing",
    "convection_pairing",
    "component_residuals",
    "assemble_residual",
    "split_residuals",
    "pairing_with",
]

DEFAULT_REGULARIZATION = 1e-10


class AssemblyError(RuntimeError):
    """Nonfinite cell contribution during residual assembly."""


class HypothesisViolation(ValueError):
    """A structural hypothesis on the data fails; message names the culprit."""


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightFunction:
    """Continuous weight t -> g(t) bounded below by `lower_bound` > 0."""

    fn: Callable[[np.ndarray], np.ndarray]
    lower_bound: float
    tag: str

    def __post_init__(self):
        if not self.lower_bound > 0.0:
            raise HypothesisViolation(
                f"(H1) requires a positive lower bound, got {self.lower_bound}")

    def evaluate(self, t):
        return self.fn(np.asarray(t, dtype=float))


def constant_weight(value: float) -> WeightFunction:
    value = float(value)
    return WeightFunction(lambda t: np.full_like(t, value), value, f"constant({value})")


def quadratic_weight(base: float, coef: float = 1.0) -> WeightFunction:
    """g(t) = base + coef t^2 with coef >= 0; lower bound is `base`."""
    base, coef = float(base), float(coef)
    if coef < 0.0:
        raise HypothesisViolation("(H1) needs coef >= 0 for a quadratic weight")
    return WeightFunction(lambda t: base + coef * t * t, base,
                          f"quadratic({base},{coef})")


@dataclass(frozen=True)
class TruncatedWeight:
    """g_R(t) = g(clamp(t, -R, R)): constant continuation outside [-R, R]."""

    base: WeightFunction
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError(f"truncation radius must be positive, got {self.radius}")

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return self.base.evaluate(np.clip(t, -self.radius, self.radius))

    @property
    def lower_bound(self) -> float:
        return self.base.lower_bound

    @property
    def tag(self) -> str:
        return f"truncated({self.base.tag},R={self.radius})"


def truncate_weight(weight: WeightFunction, radius: float) -> TruncatedWeight:
    return TruncatedWeight(weight, float(radius))


# ---------------------------------------------------------------------------
# convection families and their declared hypothesis constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthH2:
    """|f(x,s,xi)| <= sigma + b|s|^{r2} + c|xi|^{p-1} with sigma a constant bound."""

    sigma: float
    b: float
    c: float
    r1: float
    r2: float

    def __post_init__(self):
        if self.r1 < 1.0 or self.r2 < 1.0:
            raise HypothesisViolation("(H2) requires r1, r2 >= 1")


@dataclass(frozen=True)
class SignH3:
    """f(x,s,xi) s <= c0|xi|^p + c1(|s|^alpha + 1), alpha in [1, p)."""

    c0: float
    c1: float
    alpha: float


@dataclass(frozen=True)
class SignH3a:
    """f(x,s,xi) s <= c0|xi|^p + c1(|s|^p + 1); extra smallness gate on c1."""

    c0: float
    c1: float


@dataclass(frozen=True)
class GrowthH4:
    """|f(x,s,xi)| <= sigma + c1|s|^{s_exponent} + c2|xi|^{xi_exponent}."""

    sigma: float
    c1: float
    c2: float
    s_exponent: float
    xi_exponent: float


@dataclass(frozen=True)
class ConvectionFamily:
    """Right-hand side f(x, s, xi) together with its declared growth data.

    The evaluator is numpy-vectorized over leading axes: x has shape (..., d),
    s has shape (...), xi has shape (..., d).  Constants for the different
    hypotheses are stored separately and never substituted for one another.
    """

    name: str
    fn: Callable[..., np.ndarray]
    h2: GrowthH2
    h3: Optional[SignH3] = None
    h3a: Optional[SignH3a] = None
    h4: Optional[GrowthH4] = None

    def evaluate(self, x, s, xi):
        return np.asarray(self.fn(np.asarray(x, dtype=float),
                                  np.asarray(s, dtype=float),
                                  np.asarray(xi, dtype=float)), dtype=float)


def eval_convection(family: ConvectionFamily, x, s, xi):
    return family.evaluate(x, s, xi)


def zero_convection() -> ConvectionFamily:
    def fn(x, s, xi):
        return np.zeros_like(s)

    return ConvectionFamily(
        name="zero",
        fn=fn,
        h2=GrowthH2(0.0, 0.0, 0.0, 1.0, 1.0),
        h3=SignH3(0.0, 0.0, 1.0),
        h3a=SignH3a(0.0, 0.0),
        h4=GrowthH4(0.0, 0.0, 0.0, 1.0, 0.0),
    )


def constant_convection(value: float) -> ConvectionFamily:
    value = float(value)

    def fn(x, s, xi):
        return np.full_like(s, value)

    mag = abs(value)
    return ConvectionFamily(
        name=f"constant({value})",
        fn=fn,
        h2=GrowthH2(mag, 0.0, 0.0, 1.0, 1.0),
        h3=SignH3(0.0, mag, 1.0),
        h3a=SignH3a(0.0, mag),
        h4=GrowthH4(mag, 0.0, 0.0, 1.0, 0.0),
    )


def saturating_convection(p: float, alpha: float = 2.0, h_bound: float = 1.0,
                          offset: float = 0.0) -> ConvectionFamily:
    """f = |s|^{alpha-2} s + s/(1+s^2) (|xi|^{p-1} + h) + offset, h constant.

    The saturating factor |s/(1+s^2)| <= 1/2 caps the gradient coupling, so

        |f| <= |s|^{alpha-1} + (|xi|^{p-1} + h)/2 + |offset|
        f s <= |s|^alpha + |xi|^{p-1} + h + |offset| |s|

    and |xi|^{p-1} <= |xi|^p / 2 + 2^{p-1} translates these into the declared
    constants below (for alpha < 2 the power |s|^{alpha-1} <= 1 + |s| shifts
    one unit into the constant term).
    """
    p, alpha, h_bound, offset = map(float, (p, alpha, h_bound, offset))
    if p <= 1.0:
        raise ValueError(f"p must exceed 1, got {p}")
    if not 1.0 <= alpha <= p:
        raise HypothesisViolation(
            f"(H3)/(H3a) power alpha must lie in [1, p], got {alpha}")
    if h_bound < 0.0:
        raise ValueError("h bound must be nonnegative")

    def fn(x, s, xi):
        amp = np.linalg.norm(xi, axis=-1)
        power = np.sign(s) * np.abs(s) ** (alpha - 1.0)
        return power + s / (1.0 + s * s) * (amp ** (p - 1.0) + h_bound) + offset

    if alpha >= 2.0:
        sigma2 = 0.5 * h_bound + abs(offset)
        r2 = alpha - 1.0
    else:
        sigma2 = 0.5 * h_bound + abs(offset) + 1.0
        r2 = 1.0
    h2 = GrowthH2(sigma=sigma2, b=1.0, c=0.5, r1=1.0, r2=r2)

    c1 = max(1.0 + abs(offset), 2.0 ** (p - 1.0) + h_bound + abs(offset))
    h3 = SignH3(c0=0.5, c1=c1, alpha=alpha) if alpha < p else None
    h3a = SignH3a(c0=0.5, c1=c1) if alpha == p else None
    h4 = GrowthH4(sigma=sigma2, c1=1.0, c2=0.5,
                  s_exponent=max(alpha - 1.0, 1.0), xi_exponent=p - 1.0)
    return ConvectionFamily(
        name=f"saturating(alpha={alpha},h={h_bound},offset={offset})",
        fn=fn, h2=h2, h3=h3, h3a=h3a, h4=h4)


def adversarial_convection(a0: float, p: float) -> ConvectionFamily:
    """f = 2 a0 |xi|^p sign(s) / (1 + |s|): grows too fast for any valid
    sign condition because f s approaches 2 a0 |xi|^p > c0 |xi|^p."""
    a0, p = float(a0), float(p)

    def fn(x, s, xi):
        amp = np.linalg.norm(xi, axis=-1)
        return 2.0 * a0 * amp ** p * np.sign(s) / (1.0 + np.abs(s))

    return ConvectionFamily(
        name=f"adversarial(a0={a0})",
        fn=fn,
        h2=GrowthH2(0.0, 0.0, 2.0 * a0, 1.0, 1.0),
        h3=SignH3(c0=0.5 * a0, c1=1.0, alpha=1.0),
    )


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------

VARIANTS = ("competing", "cooperative")
REGIMES = ("H3", "H3a")


@dataclass(frozen=True)
class Problem:
    """Dirichlet problem data: exponents p > q > 1, domain with dim < p,
    weight, convection family, operator variant, and coercivity regime."""

    p: float
    q: float
    domain: Domain
    weight: WeightFunction
    convection: ConvectionFamily
    variant: str = "competing"
    regime: str = "H3"

    def __post_init__(self):
        if not self.p > self.q > 1.0:
            raise ValueError(f"need p > q > 1, got p={self.p}, q={self.q}")
        if not self.domain.dim < self.p:
            raise ValueError(
                f"need dimension < p for the sup-norm embedding, got "
                f"dim={self.domain.dim}, p={self.p}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        a0 = self.weight.lower_bound
        if self.regime == "H3":
            h3 = self.convection.h3
            if h3 is None:
                raise HypothesisViolation("(H3) constants missing from the family")
            if not 1.0 <= h3.alpha < self.p:
                raise HypothesisViolation(
                    f"(H3) requires alpha in [1, p), got alpha={h3.alpha}")
            if not h3.c0 < a0:
                raise HypothesisViolation(
                    f"(H3) requires c0 < a0, got c0={h3.c0}, a0={a0}")
        else:
            h3a = self.convection.h3a
            if h3a is None:
                raise HypothesisViolation("(H3a) constants missing from the family")
            if not h3a.c0 < a0:
                raise HypothesisViolation(
                    f"(H3a) requires c0 < a0, got c0={h3a.c0}, a0={a0}")

    @property
    def q_sign(self) -> float:
        return -1.0 if self.variant == "competing" else 1.0

    @property
    def p_conjugate(self) -> float:
        return self.p / (self.p - 1.0)


# ---------------------------------------------------------------------------
# assembly kernels
# ---------------------------------------------------------------------------

def _power_flux(grad: np.ndarray, exponent: float, eps: float) -> np.ndarray:
    """|grad|^{e-2} grad, regularized to (|grad|^2+eps^2)^{(e-2)/2} grad only
    where |grad| < eps would otherwise blow up (e < 2)."""
    amp = np.linalg.norm(grad, axis=-1)
    if exponent >= 2.0:
        factor = amp ** (exponent - 2.0)
    else:
        small = amp < eps
        safe = np.where(small, 1.0, amp)
        factor = np.where(small,
                          (amp * amp + eps * eps) ** (0.5 * (exponent - 2.0)),
                          safe ** (exponent - 2.0))
    return factor[..., None] * grad


def _scatter(space: FeSpace, cell_contrib: np.ndarray, label: str) -> DualVector:
    if not np.all(np.isfinite(cell_contrib)):
        bad = int(np.argwhere(~np.isfinite(cell_contrib))[0][0])
        raise AssemblyError(f"nonfinite {label} contribution on cell {bad}")
    out = np.zeros(space.dim)
    idx = space.cell_dofs
    mask = idx >= 0
    # accumulation in cell-index order keeps assembly bit-reproducible
    np.add.at(out, idx[mask], cell_contrib[mask])
    return DualVector(space, out)


def weighted_p_residual(weight, u: FeFunction, p: float,
                        eps: float = DEFAULT_REGULARIZATION) -> DualVector:
    """Entries int g(u) |grad u|^{p-2} grad u . grad phi_i.

    The flux is cellwise constant, so only the weight needs quadrature.
    """
    space = u.space
    grad = cell_gradients(u)
    flux = _power_flux(grad, p, eps)
    g_int = np.sum(space.qp_weights * weight.evaluate(values_at_qp(u)), axis=1)
    contrib = np.einsum("cd,cvd->cv", flux, space.grads) * g_int[:, None]
    return _scatter(space, contrib, "weighted p-term")


def power_laplacian_residual(u: FeFunction, exponent: float,
                             eps: float = DEFAULT_REGULARIZATION) -> DualVector:
    """Entries int |grad u|^{e-2} grad u . grad phi_i (unit weight)."""
    space = u.space
    flux = _power_flux(cell_gradients(u), exponent, eps)
    contrib = (np.einsum("cd,cvd->cv", flux, space.grads)
               * space.cell_measures[:, None])
    return _scatter(space, contrib, "gradient power term")


def convection_residual(family: ConvectionFamily, u: FeFunction) -> DualVector:
    """Entries int f(x, u, grad u) phi_i via the cell quadrature rule."""
    space = u.space
    grad = cell_gradients(u)
    m, k = space.qp_weights.shape
    xi = np.broadcast_to(grad[:, None, :], (m, k, grad.shape[1]))
    fvals = family.evaluate(space.qp_points, values_at_qp(u), xi)
    contrib = np.einsum("cq,cq,vq->cv", space.qp_weights, fvals, space.basis_qp)
    return _scatter(space, contrib, "convection term")


def component_residuals(problem: Problem, weight, u: FeFunction,
                        eps: float = DEFAULT_REGULARIZATION):
    """(p-term, q-term, convection-term) duals, signs not yet applied."""
    return (weighted_p_residual(weight, u, problem.p, eps),
            power_laplacian_residual(u, problem.q, eps),
            convection_residual(problem.convection, u))


def assemble_residual(problem: Problem, weight, u: FeFunction,
                      eps: float = DEFAULT_REGULARIZATION) -> DualVector:
    """Full residual with the variant's q-term sign."""
    p_part, q_part, f_part = component_residuals(problem, weight, u, eps)
    return DualVector(u.space, p_part.values + problem.q_sign * q_part.values
                      - f_part.values)


def split_residuals(problem: Problem, weight, u: FeFunction,
                    eps: float = DEFAULT_REGULARIZATION):
    """(principal, secondary) with residual = principal - secondary.

    Competing: principal carries the weighted p-term alone; the q-term and the
    convection term compete against it.  Cooperative: both divergence terms
    are principal and only the convection term is secondary.
    """
    p_part, q_part, f_part = component_residuals(problem, weight, u, eps)
    if problem.variant == "competing":
        principal = p_part
        secondary = q_part + f_part
    else:
        principal = p_part + q_part
        secondary = f_part
    return principal, secondary


def weighted_p_pairing(weight, u: FeFunction, v: FeFunction, p: float,
                       eps: float = DEFAULT_REGULARIZATION) -> float:
    space = u.space
    flux = _power_flux(cell_gradients(u), p, eps)
    g_int = np.sum(space.qp_weights * weight.evaluate(values_at_qp(u)), axis=1)
    return float(np.sum(g_int * np.einsum("cd,cd->c", flux, cell_gradients(v))))


def power_laplacian_pairing(u: FeFunction, v: FeFunction, exponent: float,
                            eps: float = DEFAULT_REGULARIZATION) -> float:
    space = u.space
    flux = _power_flux(cell_gradients(u), exponent, eps)
    dots = np.einsum("cd,cd->c", flux, cell_gradients(v))
    return float(np.sum(space.cell_measures * dots))


def convection_pairing(family: ConvectionFamily, u: FeFunction,
                       v: FeFunction) -> float:
    space = u.space
    grad = cell_gradients(u)
    m, k = space.qp_weights.shape
    xi = np.broadcast_to(grad[:, None, :], (m, k, grad.shape[1]))
    fvals = family.evaluate(space.qp_points, values_at_qp(u), xi)
    return float(np.sum(space.qp_weights * fvals * values_at_qp(v)))


def pairing_with(problem: Problem, weight, u: FeFunction, v: FeFunction,
                 eps: float = DEFAULT_REGULARIZATION) -> float:
    """<A(u), v> by direct integration; agrees with pair(assemble_residual, v)
    for v in the same space, but never goes through the dual vector."""
    if v.space is not u.space:
        raise ValueError("pairing requires functions on the same space")
    return (weighted_p_pairing(weight, u, v, problem.p, eps)
            + problem.q_sign * power_laplacian_pairing(u, v, problem.q, eps)
            - convection_pairing(problem.convection, u, v))
