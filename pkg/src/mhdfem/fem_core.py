"""Reference-element machinery: simplex quadrature, the four lowest-order
bases (P1, P2, N0, RT0) and the affine/Piola push-forwards.

Reference tetrahedron has vertices (0,0,0), (1,0,0), (0,1,0), (0,0,1) with
barycentrics ``l0 = 1 - x - y - z, l1 = x, l2 = y, l3 = z``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import LOCAL_EDGES, LOCAL_FACES

REF_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
REF_BARY_GRADS = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

FAMILIES = ("P1", "P2", "N0", "RT0")
MAX_DEGREE = 8


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) reference coordinates
    weights: np.ndarray  # (nq,), sum = 1/6
    degree: int


def _gauss_jacobi01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi rule on [0, 1] for weight (1 - t)^alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials of total degree ``degree``.

    Degree 1 is the centroid rule; higher degrees use the collapsed
    (conical product) Gauss-Jacobi construction.
    """
    if int(degree) != degree or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be in 1..{MAX_DEGREE}, got {degree}")
    if degree == 1:
        return QuadratureRule(np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0]), 1)
    n = degree // 2 + 1
    a, wa = _gauss_jacobi01(n, 2.0)
    b, wb = _gauss_jacobi01(n, 1.0)
    c, wc = _gauss_jacobi01(n, 0.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = np.einsum("i,j,k->ijk", wa, wb, wc)
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    return QuadratureRule(pts, W.ravel(), int(degree))


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle; returns (s, t), weights summing to 1/2."""
    n = degree // 2 + 1
    a, wa = _gauss_jacobi01(n, 1.0)
    b, wb = _gauss_jacobi01(n, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = np.column_stack([A.ravel(), (B * (1.0 - A)).ravel()])
    return pts, np.outer(wa, wb).ravel()


@lru_cache(maxsize=None)
def line_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def barycentric(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return np.column_stack([1.0 - p.sum(axis=1), p[:, 0], p[:, 1], p[:, 2]])


@dataclass(frozen=True)
class ReferenceBasis:
    family: str
    value_rank: int  # 0 scalar, 1 vector
    dof_count: int

    def eval(self, points) -> dict[str, np.ndarray]:
        """Values and derivative quantities at reference points.

        Keys: ``values`` (nq, ndof[, 3]) and one of ``grads`` (nq, ndof, 3),
        ``curls`` (nq, ndof, 3), ``divs`` (nq, ndof).
        """
        return eval_basis(self, points)


BASES = {
    "P1": ReferenceBasis("P1", 0, 4),
    "P2": ReferenceBasis("P2", 0, 10),
    "N0": ReferenceBasis("N0", 1, 6),
    "RT0": ReferenceBasis("RT0", 1, 4),
}


def reference_basis(family: str) -> ReferenceBasis:
    try:
        return BASES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}") from None


def eval_basis(basis: ReferenceBasis | str, points) -> dict[str, np.ndarray]:
    family = basis if isinstance(basis, str) else basis.family
    lam = barycentric(points)
    nq = len(lam)
    G = REF_BARY_GRADS
    if family == "P1":
        return {"values": lam, "grads": np.broadcast_to(G, (nq, 4, 3)).copy()}
    if family == "P2":
        # vertices 0..3: l_i (2 l_i - 1); edges 4..9 in LOCAL_EDGES order: 4 l_a l_b
        vals = np.empty((nq, 10))
        grads = np.empty((nq, 10, 3))
        vals[:, :4] = lam * (2.0 * lam - 1.0)
        grads[:, :4] = (4.0 * lam - 1.0)[:, :, None] * G[None]
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        vals[:, 4:] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 4:] = 4.0 * (lam[:, a, None] * G[b][None] + lam[:, b, None] * G[a][None])
        return {"values": vals, "grads": grads}
    if family == "N0":
        # edge (a, b): l_a grad l_b - l_b grad l_a, curl 2 grad l_a x grad l_b
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        vals = lam[:, a, None] * G[b][None] - lam[:, b, None] * G[a][None]
        curls = np.broadcast_to(2.0 * np.cross(G[a], G[b]), (nq, 6, 3)).copy()
        return {"values": vals, "curls": curls}
    if family == "RT0":
        # face i (opposite vertex i): 2 (x - v_i), unit outward flux through face i
        p = np.atleast_2d(np.asarray(points, dtype=float))
        vals = 2.0 * (p[:, None, :] - REF_VERTICES[None])
        return {"values": vals, "divs": np.full((nq, 4), 6.0)}
    raise ValueError(f"unknown family {family!r}")


def push_forward(family: str, J: np.ndarray, ref: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Map reference quantities to a physical cell with affine Jacobian(s) ``J``.

    ``J`` is (3, 3) or batched (nc, 3, 3); reference arrays carry a leading
    quadrature axis and results gain a leading cell axis when batched.
    Lagrange values are unchanged and gradients map by ``J^{-T}``; N0 uses the
    covariant Piola map, RT0 the contravariant one.
    """
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    Jb = J[None] if single else J
    det = np.linalg.det(Jb)
    if np.any(np.abs(det) <= 1e-14 * np.abs(Jb).max(axis=(1, 2)) ** 3):
        raise ValueError("degenerate Jacobian")
    inv = np.linalg.inv(Jb)
    out: dict[str, np.ndarray] = {}
    if family in ("P1", "P2"):
        out["values"] = np.broadcast_to(ref["values"], (len(Jb),) + ref["values"].shape)
        out["grads"] = np.einsum("cba,qib->cqia", inv, ref["grads"])
    elif family == "N0":
        out["values"] = np.einsum("cba,qib->cqia", inv, ref["values"])
        out["curls"] = np.einsum("cab,qib->cqia", Jb, ref["curls"]) / det[:, None, None, None]
    elif family == "RT0":
        out["values"] = np.einsum("cab,qib->cqia", Jb, ref["values"]) / det[:, None, None, None]
        out["divs"] = ref["divs"][None] / det[:, None, None]
    else:
        raise ValueError(f"unknown family {family!r}")
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


def reference_dof_functionals(family: str, func) -> np.ndarray:
    """Canonical DOFs of ``func`` (callable on (n, 3) reference points) on the reference cell."""
    if family in ("P1", "P2"):
        nodes = [REF_VERTICES[i] for i in range(4)]
        if family == "P2":
            nodes += [0.5 * (REF_VERTICES[a] + REF_VERTICES[b]) for a, b in LOCAL_EDGES]
        return np.asarray(func(np.array(nodes)))
    if family == "N0":
        s, w = line_rule(4)
        out = []
        for a, b in LOCAL_EDGES:
            t = REF_VERTICES[b] - REF_VERTICES[a]
            pts = REF_VERTICES[a] + s[:, None] * t
            out.append(w @ (np.asarray(func(pts)) @ t))
        return np.array(out)
    if family == "RT0":
        st, w = triangle_rule(6)
        out = []
        for i, (a, b, c) in enumerate(LOCAL_FACES):
            e1, e2 = REF_VERTICES[b] - REF_VERTICES[a], REF_VERTICES[c] - REF_VERTICES[a]
            n = np.cross(e1, e2)
            if n @ (REF_VERTICES[a] - REF_VERTICES[i]) < 0:
                n = -n
            pts = REF_VERTICES[a] + st[:, :1] * e1 + st[:, 1:] * e2
            out.append(w @ (np.asarray(func(pts)) @ n))
        return np.array(out)
    raise ValueError(f"unknown family {family!r}")


def duality_matrix(family: str) -> np.ndarray:
    """Matrix ``D[i, j] = dof_i(phi_j)``; identity for a correctly normalised basis."""
    n = reference_basis(family).dof_count
    cols = [reference_dof_functionals(family, lambda p, j=j: eval_basis(family, p)["values"][:, j])
            for j in range(n)]
    return np.column_stack(cols)
