"""Independent brute-force reference implementation and the self-test suite.

Nothing here goes through the reference-element tables, the Piola maps or
the vectorised kernels of :mod:`mhdfem.assembly`.  Basis functions are built
per cell from *physical* barycentric coordinates, each one normalised by its
own degree of freedom (edge circulation, face flux) computed from the vertex
coordinates; global numbering is rebuilt from sorted vertex tuples; and
integrals use a collapsed Gauss-Legendre rule.  Matrices are assembled dense,
one cell and one quadrature point at a time.

:func:`selftest` runs the oracle comparisons together with the algebraic
identities the energy argument relies on (skew convection, Lorentz/Ohm and
curl adjointness), the curl inclusion ``curl N0 in RT0`` and quadrature
exactness.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import assembly, fem_core
from .assembly import build_spaces, get_assembler
from .mesh import Mesh, build_box_mesh, build_from_cells
from .spaces import Field, build_space, discrete_curl_matrix, tabulate

ORACLE_POINTS = 6  # Gauss-Legendre points per collapsed direction: exact to degree 9
PAIRS = list(itertools.combinations(range(4), 2))
TRIPLES = list(itertools.combinations(range(4), 3))


def collapsed_rule(n: int = ORACLE_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (nq, 4) and weights summing to 1 on a tetrahedron."""
    g, w = np.polynomial.legendre.leggauss(n)
    g, w = (g + 1.0) / 2.0, w / 2.0
    pts, wts = [], []
    for (a, wa), (b, wb), (c, wc) in itertools.product(zip(g, w), repeat=3):
        x, y, z = a, b * (1 - a), c * (1 - a) * (1 - b)
        pts.append([1 - x - y - z, x, y, z])
        wts.append(6.0 * wa * wb * wc * (1 - a) ** 2 * (1 - b))
    return np.array(pts), np.array(wts)


@dataclass
class CellBasis:
    """Physical basis data of one cell at its quadrature points."""

    x: np.ndarray  # (nq, 3)
    w: np.ndarray  # (nq,) physical weights
    dofs: dict  # family -> global dof indices
    val: dict  # family -> (nq, nloc[, 3])
    der: dict  # family -> gradient (nq, nloc, 3[, 3]), curl (nq, nloc, 3) or div (nloc,)


class Numbering:
    """Global numbering from sorted vertex tuples."""

    def __init__(self, mesh: Mesh):
        self.nv = mesh.n_vertices
        self.edge = {tuple(sorted(e)): i for i, e in enumerate(mesh.edges.tolist())}
        self.face = {tuple(sorted(f)): i for i, f in enumerate(mesh.faces.tolist())}
        self.n_nodes = self.nv + len(self.edge)


def cell_basis(mesh: Mesh, num: Numbering, c: int, bary: np.ndarray, bw: np.ndarray) -> CellBasis:
    verts = mesh.cells[c]
    X = mesh.vertices[verts]
    T = np.vstack([np.ones(4), X.T])
    Ti = np.linalg.inv(T)
    G = Ti[:, 1:]  # gradients of the barycentrics
    vol = abs(np.linalg.det(T)) / 6.0
    L = bary
    x = L @ X
    nq = len(L)
    dofs, val, der = {}, {}, {}

    # P1
    dofs["P1"] = np.array(verts)
    val["P1"] = L.copy()
    der["P1"] = np.broadcast_to(G, (nq, 4, 3)).copy()

    # scalar P2: vertex functions then edge bubbles
    nodes, phi, dphi = [], [], []
    for i in range(4):
        nodes.append(verts[i])
        phi.append(L[:, i] * (2 * L[:, i] - 1))
        dphi.append((4 * L[:, i] - 1)[:, None] * G[i])
    for i, j in PAIRS:
        nodes.append(num.nv + num.edge[tuple(sorted((verts[i], verts[j])))])
        phi.append(4 * L[:, i] * L[:, j])
        dphi.append(4 * (L[:, i, None] * G[j] + L[:, j, None] * G[i]))
    phi = np.stack(phi, axis=1)
    dphi = np.stack(dphi, axis=1)
    vd, vv, vg = [], [], []
    for comp in range(3):
        for k in range(10):
            vd.append(comp * num.n_nodes + nodes[k])
            e = np.zeros(3)
            e[comp] = 1.0
            vv.append(phi[:, k, None] * e)
            g = np.zeros((nq, 3, 3))
            g[:, comp, :] = dphi[:, k]
            vg.append(g)
    dofs["P2v"] = np.array(vd)
    val["P2v"] = np.stack(vv, axis=1)
    der["P2v"] = np.stack(vg, axis=1)

    # Whitney edge functions, normalised by circulation along the ascending edge
    ed, ev, ec = [], [], []
    gl, gw = np.polynomial.legendre.leggauss(2)
    for i, j in PAIRS:
        a, b = (i, j) if verts[i] < verts[j] else (j, i)
        tau = X[b] - X[a]
        circ = 0.0
        for s, ws in zip((gl + 1) / 2, gw / 2):
            la, lb = 1 - s, s
            circ += ws * (la * G[b] - lb * G[a]) @ tau
        ed.append(num.edge[(verts[a], verts[b])])
        ev.append((L[:, a, None] * G[b] - L[:, b, None] * G[a]) / circ)
        ec.append(np.broadcast_to(2 * np.cross(G[a], G[b]) / circ, (nq, 3)))
    dofs["N0"] = np.array(ed)
    val["N0"] = np.stack(ev, axis=1)
    der["N0"] = np.stack(ec, axis=1)

    # Whitney face functions, normalised by flux along the ascending-tuple normal
    fd, fv, fdiv = [], [], []
    for tri in TRIPLES:
        a, b, cc = sorted(tri, key=lambda m: verts[m])
        normal = np.cross(X[b] - X[a], X[cc] - X[a])
        centroid = np.zeros(4)
        centroid[[a, b, cc]] = 1.0 / 3.0

        def whitney(Lp):
            return 2 * (Lp[..., a, None] * np.cross(G[b], G[cc])
                        + Lp[..., b, None] * np.cross(G[cc], G[a])
                        + Lp[..., cc, None] * np.cross(G[a], G[b]))

        flux = whitney(centroid) @ normal / 2.0
        fd.append(num.face[tuple(sorted(verts[[a, b, cc]]))])
        fv.append(whitney(L) / flux)
        fdiv.append(6.0 * G[a] @ np.cross(G[b], G[cc]) / flux)
    dofs["RT0"] = np.array(fd)
    val["RT0"] = np.stack(fv, axis=1)
    der["RT0"] = np.array(fdiv)
    return CellBasis(x, vol * bw, dofs, val, der)


class Oracle:
    """Dense brute-force assembler on a small mesh."""

    def __init__(self, mesh: Mesh, n_points: int = ORACLE_POINTS):
        if mesh.n_cells > 200:
            raise ValueError("the dense oracle is meant for small meshes")
        self.mesh = mesh
        self.num = Numbering(mesh)
        bary, bw = collapsed_rule(n_points)
        self.cells = [cell_basis(mesh, self.num, c, bary, bw) for c in range(mesh.n_cells)]
        self.size = {"P1": mesh.n_vertices, "P2v": 3 * self.num.n_nodes,
                     "N0": mesh.n_edges, "RT0": mesh.n_faces}

    # field values from coefficient vectors, through the oracle's own basis
    def field(self, cb: CellBasis, family: str, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("qk...,k->q...", cb.val[family], coeffs[cb.dofs[family]])

    def _assemble(self, test: str, trial: str, kernel) -> np.ndarray:
        A = np.zeros((self.size[test], self.size[trial]))
        for cb in self.cells:
            local = kernel(cb)
            A[np.ix_(cb.dofs[test], cb.dofs[trial])] += local
        return A

    def mass(self, family: str) -> np.ndarray:
        def k(cb):
            v = cb.val[family]
            if v.ndim == 2:
                v = v[..., None]
            return np.einsum("q,qia,qja->ij", cb.w, v, v)
        return self._assemble(family, family, k)

    def stiffness(self) -> np.ndarray:
        return self._assemble("P2v", "P2v", lambda cb: np.einsum(
            "q,qiab,qjab->ij", cb.w, cb.der["P2v"], cb.der["P2v"]))

    def div(self) -> np.ndarray:
        """``-(div v_j, q_i)``."""
        return self._assemble("P1", "P2v", lambda cb: -np.einsum(
            "q,qi,qjaa->ij", cb.w, cb.val["P1"], cb.der["P2v"]))

    def convection(self, a: np.ndarray) -> np.ndarray:
        """``1/2 (a . grad v_j, v_i) - 1/2 (a . grad v_i, v_j)``."""
        def k(cb):
            av = self.field(cb, "P2v", a)
            v, g = cb.val["P2v"], cb.der["P2v"]
            adv = np.einsum("qb,qjab->qja", av, g)  # (a . grad) v_j
            half = np.einsum("q,qja,qia->ij", cb.w, adv, v)
            return 0.5 * (half - half.T)
        return self._assemble("P2v", "P2v", k)

    def lorentz(self, B: np.ndarray) -> np.ndarray:
        """``((v_j x B) x B, v_i)``."""
        def k(cb):
            Bq = self.field(cb, "RT0", B)
            v = cb.val["P2v"]
            f = np.cross(np.cross(v, Bq[:, None, :]), Bq[:, None, :])
            return np.einsum("q,qja,qia->ij", cb.w, f, v)
        return self._assemble("P2v", "P2v", k)

    def exb(self, B: np.ndarray) -> np.ndarray:
        """``(N_j x B, v_i)``."""
        def k(cb):
            Bq = self.field(cb, "RT0", B)
            f = np.cross(cb.val["N0"], Bq[:, None, :])
            return np.einsum("q,qja,qia->ij", cb.w, f, cb.val["P2v"])
        return self._assemble("P2v", "N0", k)

    def uxb(self, B: np.ndarray) -> np.ndarray:
        """``(v_j x B, N_i)``."""
        def k(cb):
            Bq = self.field(cb, "RT0", B)
            f = np.cross(cb.val["P2v"], Bq[:, None, :])
            return np.einsum("q,qja,qia->ij", cb.w, f, cb.val["N0"])
        return self._assemble("N0", "P2v", k)

    def curl_rt(self) -> np.ndarray:
        """``(curl N_j, C_i)``."""
        return self._assemble("RT0", "N0", lambda cb: np.einsum(
            "q,qja,qia->ij", cb.w, cb.der["N0"], cb.val["RT0"]))

    def b_curl(self) -> np.ndarray:
        """``(C_j, curl N_i)``."""
        return self._assemble("N0", "RT0", lambda cb: np.einsum(
            "q,qja,qia->ij", cb.w, cb.val["RT0"], cb.der["N0"]))

    def load(self, family: str, func, t: float = 0.0) -> np.ndarray:
        out = np.zeros(self.size[family])
        for cb in self.cells:
            f = np.asarray(func(t, cb.x), dtype=float).reshape(len(cb.x), -1)
            v = cb.val[family]
            if v.ndim == 2:
                v = v[..., None]
            np.add.at(out, cb.dofs[family], np.einsum("q,qa,qia->i", cb.w, f, v))
        return out

    def step_operator(self, params, k: float, a: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Dense unconstrained block operator ``[u | B | E | p | lambda]``."""
        s, alpha, Re = params.s, params.alpha, params.Re
        n = [self.size["P2v"], self.size["RT0"], self.size["N0"], self.size["P1"], 1]
        o = np.concatenate([[0], np.cumsum(n)])
        A = np.zeros((o[-1], o[-1]))

        def put(i, j, block):
            A[o[i]:o[i + 1], o[j]:o[j + 1]] += block

        D = self.div()
        mean = self.mass("P1").sum(axis=1)
        put(0, 0, self.mass("P2v") / k + self.stiffness() / Re + self.convection(a) - s * self.lorentz(B))
        put(0, 2, -s * self.exb(B))
        put(0, 3, D.T)
        put(1, 1, alpha / k * self.mass("RT0"))
        put(1, 2, alpha * self.curl_rt())
        put(2, 0, s * self.uxb(B))
        put(2, 1, -alpha * self.b_curl())
        put(2, 2, s * self.mass("N0"))
        put(3, 0, D)
        put(3, 4, mean[:, None])
        put(4, 3, mean[None, :])
        return A


# --- self-test ---------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def rel_diff(A, B) -> float:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    nb = np.linalg.norm(B)
    return float(np.linalg.norm(A - B) / (nb if nb > 0 else 1.0))


def jittered_mesh(n: int = 2, amount: float = 0.15, seed: int = 7) -> Mesh:
    """Division-n cube mesh with interior vertices randomly displaced."""
    base = build_box_mesh(n, n, n)
    rng = np.random.default_rng(seed)
    v = base.vertices.copy()
    interior = np.ones(len(v), dtype=bool)
    interior[base.boundary_vertices] = False
    v[interior] += amount / n * rng.uniform(-1, 1, (interior.sum(), 3))
    return build_from_cells(v, base.cells)


def oracle_meshes() -> list[tuple[str, Mesh]]:
    return [
        ("box-1", build_box_mesh(1, 1, 1)),
        ("box-2x1x1", build_box_mesh(2, 1, 1, extents=(2.0, 0.5, 1.5))),
        ("box-2", build_box_mesh(2, 2, 2)),
        ("jittered-2", jittered_mesh(2)),
    ]


def _random_fields(spaces, rng):
    a = Field(spaces.u, rng.standard_normal(spaces.u.dof_count))
    B = Field(spaces.B, rng.standard_normal(spaces.B.dof_count))
    return a, B


def check_quadrature(tol: float = 1e-13) -> list[CheckResult]:
    """Exactness of the tetrahedron, triangle and line rules on monomials."""
    out = []
    worst = 0.0
    for d in range(1, fem_core.MAX_DEGREE + 1):
        q = fem_core.quadrature_rule(d)
        for a, b, c in itertools.product(range(d + 1), repeat=3):
            if a + b + c > d:
                continue
            exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
            got = float(np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b * q.points[:, 2] ** c))
            worst = max(worst, abs(got - exact) / exact)
    out.append(CheckResult("quadrature tetrahedron degrees 1-8", worst, tol))
    worst = 0.0
    for d in range(1, fem_core.MAX_DEGREE + 1):
        pts, w = fem_core.triangle_rule(d)
        for a, b in itertools.product(range(d + 1), repeat=2):
            if a + b > d:
                continue
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            got = float(np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b))
            worst = max(worst, abs(got - exact) / exact)
    out.append(CheckResult("quadrature triangle degrees 1-8", worst, tol))
    worst = 0.0
    for n in range(1, 6):
        s, w = fem_core.line_rule(n)
        for a in range(2 * n):
            worst = max(worst, abs(float(np.sum(w * s**a)) - 1.0 / (a + 1)) * (a + 1))
    out.append(CheckResult("quadrature line 1-5 points", worst, tol))
    return out


def check_oracle(mesh: Mesh, label: str, seed: int = 0, tol: float = 1e-12) -> list[CheckResult]:
    """Library matrices versus the dense oracle, plus the algebraic identities."""
    from .scheme import ProblemParams

    rng = np.random.default_rng(seed)
    spaces = build_spaces(mesh)
    orc = Oracle(mesh)
    a, B = _random_fields(spaces, rng)
    res = []

    def cmp(name, lib, ref):
        res.append(CheckResult(f"[{label}] {name} vs oracle", rel_diff(lib, ref), tol))

    cmp("mass P2v", spaces.matrix("Mu"), orc.mass("P2v"))
    cmp("mass RT0", spaces.matrix("MB"), orc.mass("RT0"))
    cmp("mass N0", spaces.matrix("ME"), orc.mass("N0"))
    cmp("mass P1", spaces.matrix("Mp"), orc.mass("P1"))
    cmp("stiffness P2v", spaces.matrix("Ku"), orc.stiffness())
    cmp("divergence", spaces.matrix("Bdiv"), orc.div())
    N = assembly.assemble_convection(a)
    cmp("convection", N, orc.convection(a.coefficients))
    L = assembly.assemble_cross_coupling(B, "uxBxB.v", spaces.u)
    cmp("Lorentz (uxB)xB.v", L, orc.lorentz(B.coefficients))
    X = assembly.assemble_cross_coupling(B, "ExB.v", spaces.u, spaces.E)
    cmp("ExB.v", X, orc.exb(B.coefficients))
    U = assembly.assemble_cross_coupling(B, "uxB.F", spaces.E, spaces.u)
    cmp("uxB.F", U, orc.uxb(B.coefficients))
    C = spaces.matrix("curlE.C")
    cmp("curlE.C", C, orc.curl_rt())
    Bc = spaces.matrix("B.curlF")
    cmp("B.curlF", Bc, orc.b_curl())

    def f(t, x):  # cubic, so both quadratures are exact
        x0, x1, x2 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([x0 * x1 + x2**2 + t, x0**3 - x1, x0 * x1 * x2 - 2 * x2], axis=-1)

    for fam, space in (("P2v", spaces.u), ("N0", spaces.E), ("RT0", spaces.B)):
        cmp(f"load {fam}", assembly.load_vector(space, f, 0.3)[None, :], orc.load(fam, f, 0.3)[None, :])

    params = ProblemParams(Re=2.0, Rm=3.0, s=0.7)
    k = 0.05
    Aop = get_assembler(spaces, params, k).operator(a, B)
    cmp("step operator", Aop, orc.step_operator(params, k, a.coefficients, B.coefficients))

    # identities behind the discrete energy law
    res.append(CheckResult(f"[{label}] convection skewness |N+N^T|/|N|",
                           float(sp.linalg.norm(N + N.T) / sp.linalg.norm(N)), tol))
    res.append(CheckResult(f"[{label}] Lorentz/Ohm adjointness |(uxB,F) + (ExB,v)^T|",
                           float(sp.linalg.norm(U + X.T) / sp.linalg.norm(X)), tol))
    res.append(CheckResult(f"[{label}] curl adjointness |(B,curl F) - (curl E,C)^T|",
                           float(sp.linalg.norm(Bc - C.T) / sp.linalg.norm(C)), tol))
    o = spaces.offsets
    blk = lambda i, j: Aop[o[i]:o[i + 1], o[j]:o[j + 1]]  # noqa: E731
    res.append(CheckResult(f"[{label}] operator curl pair |A_EB + A_BE^T|",
                           float(sp.linalg.norm(blk(2, 1) + blk(1, 2).T) / sp.linalg.norm(blk(1, 2))), tol))
    res.append(CheckResult(f"[{label}] operator Lorentz/Ohm pair |A_Eu - A_uE^T|",
                           float(sp.linalg.norm(blk(2, 0) - blk(0, 2).T) / sp.linalg.norm(blk(0, 2))), tol))
    # the coupling quadratic form equals s |E + u x B|^2
    u = rng.standard_normal(spaces.u.dof_count)
    E = rng.standard_normal(spaces.E.dof_count)
    s = params.s
    quad = (u @ (-s * L @ u) + u @ (-s * X @ E) + E @ (s * U @ u) + E @ (s * spaces.matrix("ME") @ E))
    jj = 0.0
    for cb in orc.cells:
        j = orc.field(cb, "N0", E) + np.cross(orc.field(cb, "P2v", u), orc.field(cb, "RT0", B.coefficients))
        jj += float(np.sum(cb.w * np.sum(j * j, axis=1)))
    res.append(CheckResult(f"[{label}] coupling form = s|E + u x B|^2", abs(quad - s * jj) / (s * jj), tol))
    return res


def check_curl_inclusion(mesh: Mesh, label: str, tol: float = 1e-12) -> list[CheckResult]:
    """RT0 interpolants of the curls of all N0 basis functions versus the curls themselves."""
    E = build_space(mesh, "N0")
    R = build_space(mesh, "RT0")
    # face fluxes of curl N_e along the global normal, from each adjacent cell
    num = Numbering(mesh)
    bary = np.full((1, 4), 0.25)
    flux = np.full((R.dof_count, E.dof_count), np.nan)
    consistency = 0.0
    for c in range(mesh.n_cells):
        cb = cell_basis(mesh, num, c, bary, np.ones(1))
        verts = mesh.cells[c]
        for tri in TRIPLES:
            a, b, cc = sorted(verts[list(tri)])
            X = mesh.vertices[[a, b, cc]]
            nrm = np.cross(X[1] - X[0], X[2] - X[0]) / 2.0
            fidx = num.face[(a, b, cc)]
            vals = cb.der["N0"][0] @ nrm
            for e, v in zip(cb.dofs["N0"], vals):
                if np.isnan(flux[fidx, e]):
                    flux[fidx, e] = v
                else:
                    consistency = max(consistency, abs(flux[fidx, e] - v))
    flux = np.nan_to_num(flux)  # edges not touching a face contribute no flux
    pts = fem_core.quadrature_rule(3).points
    curls = tabulate(E, pts)["curls"]  # (nc, nq, 6, 3) per local edge
    rt = tabulate(R, pts)["values"]  # (nc, nq, 4, 3)
    worst = 0.0
    for e in range(E.dof_count):
        direct = np.einsum("cqka,ck->cqa", curls, (E.cell_dofs == e).astype(float))
        interp = np.einsum("cqfa,cf->cqa", rt, flux[R.cell_dofs, e])
        worst = max(worst, float(np.abs(direct - interp).max()))
    D = discrete_curl_matrix(E, R).toarray()
    return [
        CheckResult(f"[{label}] curl N0 == RT0 interpolant pointwise (max abs)", worst, tol),
        CheckResult(f"[{label}] curl N0 normal flux single-valued across faces", consistency, tol),
        CheckResult(f"[{label}] interpolated curl == incidence matrix", float(np.abs(flux - D).max()), tol),
    ]


def selftest(log=print) -> list[CheckResult]:
    """Run every oracle and invariant check; ``log`` receives one line per check."""
    t0 = time.perf_counter()
    results = check_quadrature()
    for i, (label, mesh) in enumerate(oracle_meshes()):
        results += check_oracle(mesh, label, seed=i)
    results += check_curl_inclusion(build_box_mesh(2, 2, 2), "box-2")
    results += check_curl_inclusion(jittered_mesh(2), "jittered-2")
    for r in results:
        log(r.line())
    log(f"selftest: {sum(r.passed for r in results)}/{len(results)} passed in "
        f"{time.perf_counter() - t0:.1f} s")
    return results
