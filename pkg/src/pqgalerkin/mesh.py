"""Simplicial interval and rectangle meshes with uniform nested refinement.

Level-0 meshes partition an interval into equal cells, or an axis-aligned
rectangle into a structured triangulation.  Refinement bisects every interval
cell (red-refines every triangle), so each vertex of a level is either a
parent vertex or an edge midpoint; the per-vertex parent maps record that
embedding and make piecewise-linear prolongation exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

__all__ = [
    "MeshError",
    "Domain",
    "MeshLevel",
    "QuadratureRule",
    "build_mesh",
    "refine",
    "quadrature_for",
    "midpoint_rule",
    "gauss2_rule",
    "triangle_rule_degree2",
    "triangle_rule_degree4",
]


class MeshError(ValueError):
    """Invalid mesh construction input."""


@dataclass(frozen=True)
class Domain:
    """Open interval (a, b) or axis-aligned rectangle (a, b) x (c, d)."""

    dim: int
    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise MeshError(f"only dimensions 1 and 2 are supported, got {self.dim}")
        if len(self.bounds) != self.dim:
            raise MeshError("bounds do not match dimension")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise MeshError(f"inverted or empty bounds ({lo}, {hi})")

    @staticmethod
    def interval(a: float, b: float) -> "Domain":
        return Domain(1, ((float(a), float(b)),))

    @staticmethod
    def rectangle(a: float, b: float, c: float, d: float) -> "Domain":
        return Domain(2, ((float(a), float(b)), (float(c), float(d))))

    @property
    def measure(self) -> float:
        out = 1.0
        for lo, hi in self.bounds:
            out *= hi - lo
        return out

    @property
    def side_lengths(self) -> Tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)


class MeshLevel:
    """One level of a nested simplicial mesh hierarchy.

    Attributes
    ----------
    level : int
        0 for a freshly built mesh, parent.level + 1 after refinement.
    vertices : (n, dim) float array
    cells : (m, dim + 1) int array of vertex indices
    boundary : (n,) bool array, True exactly for vertices on the domain boundary
    cell_measures : (m,) float array of cell lengths / areas
    parent : MeshLevel or None
    parent_indices, parent_weights : (n, 2) arrays expressing every vertex as a
        convex combination of at most two parent vertices (identity rows for
        persisting vertices, 1/2-1/2 rows for edge midpoints).
    """

    def __init__(self, level, domain, vertices, cells, parent=None,
                 parent_indices=None, parent_weights=None):
        self.level = int(level)
        self.domain = domain
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.parent: Optional[MeshLevel] = parent
        self.parent_indices = parent_indices
        self.parent_weights = parent_weights
        self.boundary = _boundary_mask(domain, self.vertices)
        self.cell_measures = _cell_measures(domain.dim, self.vertices, self.cells)
        if np.any(self.cell_measures <= 0.0):
            bad = int(np.argmin(self.cell_measures))
            raise MeshError(f"degenerate cell {bad} with measure {self.cell_measures[bad]}")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def __repr__(self):
        return (f"MeshLevel(level={self.level}, dim={self.domain.dim}, "
                f"vertices={self.n_vertices}, cells={self.n_cells})")


def _boundary_mask(domain: Domain, pts: np.ndarray) -> np.ndarray:
    mask = np.zeros(pts.shape[0], dtype=bool)
    for axis, (lo, hi) in enumerate(domain.bounds):
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        mask |= np.abs(pts[:, axis] - lo) <= tol
        mask |= np.abs(pts[:, axis] - hi) <= tol
    return mask


def _cell_measures(dim: int, pts: np.ndarray, cells: np.ndarray) -> np.ndarray:
    if dim == 1:
        return np.abs(pts[cells[:, 1], 0] - pts[cells[:, 0], 0])
    e1 = pts[cells[:, 1]] - pts[cells[:, 0]]
    e2 = pts[cells[:, 2]] - pts[cells[:, 0]]
    return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_mesh(domain_or_bounds, base_cells: Union[int, Tuple[int, int]]) -> MeshLevel:
    """Build a level-0 mesh with `base_cells` uniform cells (per side in 2D).

    Interval domains require an integer cell count >= 2.  Rectangles accept an
    integer (same count on both sides) or an (nx, ny) pair, each entry >= 2.
    """
    domain = _as_domain(domain_or_bounds)
    if domain.dim == 1:
        n = _positive_count(base_cells)
        (a, b), = domain.bounds
        verts = np.linspace(a, b, n + 1).reshape(-1, 1)
        cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        return MeshLevel(0, domain, verts, cells)

    if isinstance(base_cells, (tuple, list)):
        nx, ny = (_positive_count(c) for c in base_cells)
    else:
        nx = ny = _positive_count(base_cells)
    (a, b), (c, d) = domain.bounds
    xs = np.linspace(a, b, nx + 1)
    ys = np.linspace(c, d, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return MeshLevel(0, domain, verts, np.array(cells, dtype=np.int64))


def _positive_count(n) -> int:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise MeshError(f"cell count must be an integer, got {n!r}")
    if n < 2:
        raise MeshError(f"need at least 2 cells per side, got {n}")
    return int(n)


def _as_domain(d) -> Domain:
    if isinstance(d, Domain):
        return d
    if isinstance(d, (tuple, list)) and len(d) == 2 and np.isscalar(d[0]):
        return Domain.interval(*d)
    raise MeshError(f"cannot interpret {d!r} as a domain")


def refine(mesh: MeshLevel) -> MeshLevel:
    """Uniformly refine: bisect interval cells, red-refine triangles.

    Parent vertices keep their indices; midpoint vertices are appended in the
    deterministic order edges are first visited, so refinement is reproducible.
    """
    verts = mesh.vertices
    n = mesh.n_vertices
    midpoint_of = {}
    new_pts = []

    def mid(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        k = midpoint_of.get(key)
        if k is None:
            k = n + len(new_pts)
            midpoint_of[key] = k
            new_pts.append(0.5 * (verts[key[0]] + verts[key[1]]))
        return k

    child_cells = []
    if mesh.domain.dim == 1:
        for i, j in mesh.cells:
            m = mid(i, j)
            child_cells.append((i, m))
            child_cells.append((m, j))
    else:
        for a, b, c in mesh.cells:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            child_cells.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])

    child_verts = np.vstack([verts, np.asarray(new_pts)])
    idx = np.empty((child_verts.shape[0], 2), dtype=np.int64)
    wts = np.empty((child_verts.shape[0], 2), dtype=float)
    idx[:n, 0] = np.arange(n)
    idx[:n, 1] = np.arange(n)
    wts[:n] = (1.0, 0.0)
    for (i, j), k in midpoint_of.items():
        idx[k] = (i, j)
        wts[k] = (0.5, 0.5)

    return MeshLevel(mesh.level + 1, mesh.domain, child_verts,
                     np.asarray(child_cells, dtype=np.int64),
                     parent=mesh, parent_indices=idx, parent_weights=wts)


# ---------------------------------------------------------------------------
# quadrature on the reference simplex ([0,1] or the unit triangle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference simplex, exact up to `degree`."""

    dim: int
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise MeshError("quadrature weights must be positive")
        if abs(float(self.weights.sum()) - self.reference_measure) > 1e-13:
            raise MeshError("quadrature weights must sum to the reference measure")

    @property
    def reference_measure(self) -> float:
        return 1.0 if self.dim == 1 else 0.5


def midpoint_rule() -> QuadratureRule:
    return QuadratureRule(1, np.array([[0.5]]), np.array([1.0]), 1)


def gauss2_rule() -> QuadratureRule:
    h = 0.5 / np.sqrt(3.0)
    return QuadratureRule(1, np.array([[0.5 - h], [0.5 + h]]), np.array([0.5, 0.5]), 3)


def triangle_rule_degree2() -> QuadratureRule:
    # edge midpoints of the unit triangle
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    return QuadratureRule(2, pts, np.full(3, 1.0 / 6.0), 2)


def triangle_rule_degree4() -> QuadratureRule:
    # six-point symmetric rule, exact through degree 4
    a, b = 0.4459484909159649, 0.1081030181680702
    c, d = 0.0915762135097707, 0.8168475729804585
    wa, wc = 0.2233815896780115, 0.1099517436553219
    pts = np.array([
        [a, a], [b, a], [a, b],
        [c, c], [d, c], [c, d],
    ])
    w = 0.5 * np.array([wa, wa, wa, wc, wc, wc])
    return QuadratureRule(2, pts, w, 4)


def quadrature_for(p_max_exponent: float, dim: int = 1) -> QuadratureRule:
    """Default cell rule: exactness degree >= 3 in either dimension.

    Gradients of piecewise-linear functions are cellwise constant, so every
    gradient power is integrated exactly; vertex-value powers |u|^r are exact
    for r in {1, 2} and approximate otherwise, which callers must tolerate.
    """
    if p_max_exponent < 1.0:
        raise MeshError(f"exponent must be >= 1, got {p_max_exponent}")
    return gauss2_rule() if dim == 1 else triangle_rule_degree4()
