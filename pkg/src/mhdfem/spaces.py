"""Global finite element spaces on a Mesh.

Four families are supported, matching the lowest-order de Rham compatible
discretisation used by the solver:

``P2v``  vector P2 velocity (component-blocked: dof = comp * n_nodes + node)
``P1``   scalar P1 pressure
``N0``   lowest-order Nedelec edge elements (tangential edge integrals)
``RT0``  lowest-order Raviart-Thomas face elements (face fluxes)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem_core
from .fem_core import LOCAL_EDGES
from .mesh import Mesh

SPACE_FAMILIES = ("P2v", "P1", "N0", "RT0")


@dataclass(frozen=True)
class FeSpace:
    mesh: Mesh
    family: str
    dof_count: int
    cell_dofs: np.ndarray  # (nc, local_dofs)
    cell_signs: np.ndarray  # (nc, local_dofs), +/-1
    boundary_dofs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ref_family(self) -> str:
        return "P2" if self.family == "P2v" else self.family

    @property
    def n_nodes(self) -> int:
        """Scalar node count for P2v (vertices then edge midpoints)."""
        return self.mesh.n_vertices + self.mesh.n_edges

    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)


@dataclass
class Field:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"coefficient length {self.coefficients.shape} != dof_count {self.space.dof_count}"
            )

    def copy(self) -> "Field":
        return Field(self.space, self.coefficients.copy())


def build_space(mesh: Mesh, family: str) -> FeSpace:
    nc = mesh.n_cells
    if family == "P1":
        return FeSpace(mesh, family, mesh.n_vertices, mesh.cells.copy(),
                       np.ones((nc, 4), dtype=int), np.array([], dtype=np.int64))
    if family == "N0":
        return FeSpace(mesh, family, mesh.n_edges, mesh.cell_edges.copy(),
                       mesh.cell_edge_signs.copy(), mesh.boundary_edges.copy())
    if family == "RT0":
        return FeSpace(mesh, family, mesh.n_faces, mesh.cell_faces.copy(),
                       mesh.cell_face_signs.copy(), mesh.boundary_faces.copy())
    if family == "P2v":
        nn = mesh.n_vertices + mesh.n_edges
        nodes = np.hstack([mesh.cells, mesh.n_vertices + mesh.cell_edges])  # (nc, 10)
        dofs = np.hstack([nodes + c * nn for c in range(3)])
        bnodes = np.concatenate([mesh.boundary_vertices, mesh.n_vertices + mesh.boundary_edges])
        bdofs = np.sort(np.concatenate([bnodes + c * nn for c in range(3)]))
        return FeSpace(mesh, family, 3 * nn, dofs, np.ones_like(dofs), bdofs)
    raise ValueError(f"unknown family {family!r}; expected one of {SPACE_FAMILIES}")


# --- canonical degrees of freedom in physical space -------------------------

def p2_nodes(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    return np.vstack([v, 0.5 * (v[mesh.edges[:, 0]] + v[mesh.edges[:, 1]])])


def edge_dofs(mesh: Mesh, func, t: float | None = None, edges=None, npts: int = 8) -> np.ndarray:
    """Tangential line integrals along ascending-oriented edges."""
    edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
    if len(edges) == 0:
        return np.zeros(0)
    s, w = fem_core.line_rule(npts)
    x0 = mesh.vertices[mesh.edges[edges, 0]]
    tau = mesh.vertices[mesh.edges[edges, 1]] - x0
    pts = x0[:, None, :] + s[None, :, None] * tau[:, None, :]
    vals = _call(func, pts.reshape(-1, 3), t).reshape(len(edges), len(s), 3)
    return np.einsum("q,eqi,ei->e", w, vals, tau)


def face_dofs(mesh: Mesh, func, t: float | None = None, faces=None, degree: int = 14) -> np.ndarray:
    """Fluxes through faces along the global normal of the ascending tuple."""
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces)
    if len(faces) == 0:
        return np.zeros(0)
    st, w = fem_core.triangle_rule(degree)
    fv = mesh.vertices[mesh.faces[faces]]
    e1, e2 = fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0]
    n = np.cross(e1, e2)
    pts = fv[:, None, 0] + st[None, :, :1] * e1[:, None] + st[None, :, 1:] * e2[:, None]
    vals = _call(func, pts.reshape(-1, 3), t).reshape(len(faces), len(w), 3)
    return np.einsum("q,fqi,fi->f", w, vals, n)


def _call(func, x, t):
    out = func(x) if t is None else func(t, x)
    return np.asarray(out, dtype=float)


def interpolate(space: FeSpace, func, t: float | None = None) -> Field:
    """Canonical interpolant of an analytic field.

    ``func`` maps an (n, 3) array of positions to values ((n,) scalars or
    (n, 3) vectors); if ``t`` is given it is called as ``func(t, x)``.
    """
    mesh = space.mesh
    if space.family == "P1":
        coeffs = _call(func, mesh.vertices, t).reshape(-1)
    elif space.family == "P2v":
        coeffs = _call(func, p2_nodes(mesh), t).T.reshape(-1)
    elif space.family == "N0":
        coeffs = edge_dofs(mesh, func, t)
    elif space.family == "RT0":
        coeffs = face_dofs(mesh, func, t)
    else:
        raise ValueError(space.family)
    return Field(space, coeffs)


def boundary_values(space: FeSpace, func, t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(dof indices, values) of the canonical DOFs of ``func`` on boundary entities."""
    mesh = space.mesh
    idx = space.boundary_dofs
    if func is None or len(idx) == 0:
        return idx, np.zeros(len(idx))
    if space.family == "N0":
        return idx, edge_dofs(mesh, func, t, edges=idx)
    if space.family == "RT0":
        return idx, face_dofs(mesh, func, t, faces=idx)
    if space.family == "P2v":
        nn = space.n_nodes
        comp, node = np.divmod(idx, nn)
        vals = _call(func, p2_nodes(mesh)[node], t)
        return idx, vals[np.arange(len(idx)), comp]
    return idx, np.zeros(0)


# --- evaluation of fields at physical quadrature points ---------------------

def tabulate(space: FeSpace, points) -> dict[str, np.ndarray]:
    """Physical basis quantities on every cell at reference ``points``.

    Signs for global orientation are folded in.  Shapes: values
    (nc, nq, nloc[, 3]); grads (nc, nq, nloc, 3) for scalar families;
    curls/divs for N0/RT0.  P2v returns the scalar P2 tabulation; vector
    structure is handled by callers.
    """
    points = np.asarray(points, dtype=float)
    key = ("tab", points.tobytes())
    if key in space._cache:
        return space._cache[key]
    fam = space.ref_family
    ref = fem_core.eval_basis(fam, points)
    phys = fem_core.push_forward(fam, space.mesh.jacobians(), ref)
    if fam in ("N0", "RT0"):
        s = space.cell_signs[:, None, :]
        phys = {k: v * (s[..., None] if v.ndim == 4 else s) for k, v in phys.items()}
    else:
        phys = {k: np.ascontiguousarray(v) for k, v in phys.items()}
    space._cache[key] = phys
    return phys


def physical_points(mesh: Mesh, points) -> np.ndarray:
    """(nc, nq, 3) physical coordinates of reference points on each cell."""
    x0 = mesh.vertices[mesh.cells[:, 0]]
    return x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians(), np.asarray(points))


def local_coefficients(field: Field) -> np.ndarray:
    """Per-cell coefficient blocks; P2v gives (nc, 3, 10)."""
    sp = field.space
    loc = field.coefficients[sp.cell_dofs]
    if sp.family == "P2v":
        return loc.reshape(len(loc), 3, 10)
    return loc


def evaluate(field: Field, points, what: str = "values") -> np.ndarray:
    """Field quantity on every cell at reference points.

    ``what`` is ``values`` always, and ``grads`` (P1, P2v -> (nc, nq, 3, 3)
    as d u_i / d x_j), ``curls`` (N0) or ``divs`` (RT0, P2v).
    """
    sp = field.space
    tab = tabulate(sp, points)
    loc = local_coefficients(field)
    if sp.family == "P2v":
        if what == "values":
            return np.einsum("cqk,cik->cqi", tab["values"], loc)
        g = np.einsum("cqkj,cik->cqij", tab["grads"], loc)
        if what == "grads":
            return g
        if what == "divs":
            return np.trace(g, axis1=2, axis2=3)
        raise ValueError(what)
    arr = tab[what]
    if arr.ndim == 4:
        return np.einsum("cqki,ck->cqi", arr, loc)
    return np.einsum("cqk,ck->cq", arr, loc)


def cell_divergence(B: Field) -> np.ndarray:
    """Exact cell-wise divergence of an RT0 field (piecewise constant)."""
    sp = B.space
    if sp.family != "RT0":
        raise ValueError("cell_divergence needs an RT0 field")
    flux = B.coefficients[sp.cell_dofs] * sp.cell_signs
    return flux.sum(axis=1) / sp.mesh.cell_volumes()


def discrete_curl_matrix(nedelec: FeSpace, rt: FeSpace):
    """Face-edge incidence D with curl(sum e_i N_i) = sum (D e)_f RT_f exactly."""
    import scipy.sparse as sp

    mesh = nedelec.mesh
    faces = mesh.faces
    edge_index = {tuple(e): i for i, e in enumerate(mesh.edges)}
    rows, cols, vals = [], [], []
    # boundary of the face (a<b<c), oriented by the right-hand rule: a->b, b->c, c->a
    for f, (a, b, c) in enumerate(faces):
        for p, q, sgn in ((a, b, 1.0), (b, c, 1.0), (a, c, -1.0)):
            rows.append(f)
            cols.append(edge_index[(p, q)])
            vals.append(sgn)
    return sp.csr_matrix((vals, (rows, cols)), shape=(rt.dof_count, nedelec.dof_count))


__all__ = [
    "FeSpace", "Field", "build_space", "interpolate", "boundary_values", "tabulate",
    "evaluate", "cell_divergence", "discrete_curl_matrix", "physical_points", "LOCAL_EDGES",
]
