"""Vectorised cell-wise assembly of the bilinear and trilinear forms.

All matrices are ``scipy.sparse.csr_matrix`` with rows indexing test
functions and columns indexing trial functions.  Local blocks are computed
for all cells at once and summed in a fixed cell order, so repeated calls are
bit-identical.

The step system of the time integrators uses :class:`StepAssembler`, which
fixes the sparsity pattern of the whole block operator once and scatters the
state-dependent blocks straight into its data array.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem_core
from .spaces import FeSpace, Field, boundary_values, evaluate, physical_points, tabulate

# quadrature degree per form; each integrand is integrated exactly
DEG_MASS = {"P1": 2, "P2v": 4, "N0": 2, "RT0": 2}
DEG_CONVECTION = 5
DEG_LORENTZ = 6
DEG_COUPLING = 4
DEG_SOURCE = 6

CROSS_PATTERNS = {
    # name: (test space, trial space)
    "ExB.v": ("P2v", "N0"),  # (E x B_given, v)
    "uxBxB.v": ("P2v", "P2v"),  # ((u x B_given) x B_given, v)
    "uxB.F": ("N0", "P2v"),  # (u x B_given, F)
    "E.F": ("N0", "N0"),  # (E, F)
    "B.curlF": ("N0", "RT0"),  # (B, curl F)
    "curlE.C": ("RT0", "N0"),  # (curl E, C)
}


def _rule(degree):
    q = fem_core.quadrature_rule(degree)
    return q.points, q.weights


def _wdet(mesh, weights) -> np.ndarray:
    return np.abs(6.0 * mesh.cell_volumes())[:, None] * weights[None, :]


def scatter(local: np.ndarray, row_dofs: np.ndarray, col_dofs: np.ndarray, shape) -> sp.csr_matrix:
    """Sum local (nc, nr, ncol) blocks into a CSR matrix with sorted, unique columns."""
    nc, nr, ncol = local.shape
    rows = np.broadcast_to(row_dofs[:, :, None], (nc, nr, ncol)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (nc, nr, ncol)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def scatter_vector(local: np.ndarray, dofs: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


def _vector_block(scalar_local: np.ndarray) -> np.ndarray:
    """(nc, 10, 10) scalar block -> (nc, 30, 30) component-diagonal block."""
    nc, n, _ = scalar_local.shape
    out = np.zeros((nc, 3, n, 3, n))
    for c in range(3):
        out[:, c, :, c, :] = scalar_local
    return out.reshape(nc, 3 * n, 3 * n)


# --- local kernels ------------------------------------------------------------

def local_mass(space: FeSpace, degree: int | None = None) -> np.ndarray:
    """Scalar (P1, P2v per component) or vector (N0, RT0) element mass matrices."""
    pts, w = _rule(degree or DEG_MASS[space.family])
    wd = _wdet(space.mesh, w)
    v = tabulate(space, pts)["values"]
    if v.ndim == 4:
        return np.einsum("cq,cqia,cqja->cij", wd, v, v, optimize=True)
    return np.einsum("cq,cqi,cqj->cij", wd, v, v, optimize=True)


def local_stiffness(space: FeSpace) -> np.ndarray:
    pts, w = _rule(2)
    wd = _wdet(space.mesh, w)
    g = tabulate(space, pts)["grads"]
    return np.einsum("cq,cqia,cqja->cij", wd, g, g, optimize=True)


def local_convection(advector: Field) -> np.ndarray:
    """Scalar skew block ``1/2 (a . grad phi_j, phi_i) - 1/2 (a . grad phi_i, phi_j)``."""
    space = advector.space
    pts, w = _rule(DEG_CONVECTION)
    wd = _wdet(space.mesh, w)
    phi = fem_core.eval_basis("P2", pts)["values"]  # (nq, 10), same on every cell
    a = evaluate(advector, pts)
    adv = np.einsum("cqa,cqja->cqj", a, tabulate(space, pts)["grads"], optimize=True)
    half = phi.T @ (wd[:, :, None] * adv)  # [c, i, j] = sum_q w phi_i (a . grad phi_j)
    return 0.5 * (half - np.transpose(half, (0, 2, 1)))


def local_lorentz(B: Field) -> np.ndarray:
    """(nc, 30, 30) block of ``((psi_j x B) x B, psi_i)`` on P2 vectors."""
    pts, w = _rule(DEG_LORENTZ)
    wd = _wdet(B.space.mesh, w)
    phi = fem_core.eval_basis("P2", pts)["values"]
    Bq = evaluate(B, pts)
    # ((e_b x B) x B) . e_a = B_a B_b - |B|^2 delta_ab
    kern = Bq[:, :, :, None] * Bq[:, :, None, :] - np.einsum("cqa,cqa->cq", Bq, Bq)[:, :, None, None] * np.eye(3)
    kern = (wd[:, :, None, None] * kern).reshape(len(wd), len(w), 9)
    pp = (phi[:, :, None] * phi[:, None, :]).reshape(len(w), 100)
    loc = np.transpose(kern, (0, 2, 1)) @ pp  # (nc, 9, 100)
    loc = loc.reshape(-1, 3, 3, 10, 10).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(loc).reshape(-1, 30, 30)


def local_exb(B: Field, E_space: FeSpace) -> np.ndarray:
    """(nc, 30, 6) block of ``(N_e x B, psi_i)``."""
    pts, w = _rule(DEG_COUPLING)
    wd = _wdet(B.space.mesh, w)
    phi = fem_core.eval_basis("P2", pts)["values"]
    N = tabulate(E_space, pts)["values"]  # (nc, nq, 6, 3)
    NxB = np.cross(N, evaluate(B, pts)[:, :, None, :]) * wd[:, :, None, None]
    loc = phi.T @ NxB.reshape(len(wd), len(w), 18)  # (nc, 10, 18)
    loc = loc.reshape(-1, 10, 6, 3).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(loc).reshape(-1, 30, 6)


def local_curl_rt(E_space: FeSpace, B_space: FeSpace) -> np.ndarray:
    """(nc, 4, 6) block of ``(curl N_e, RT_f)``."""
    pts, w = _rule(1)
    wd = _wdet(E_space.mesh, w)
    curl = tabulate(E_space, pts)["curls"]
    rt = tabulate(B_space, pts)["values"]
    return np.einsum("cq,cqfa,cqea->cfe", wd, rt, curl)


def local_div(vspace: FeSpace, pspace: FeSpace) -> np.ndarray:
    """(nc, 4, 30) block of ``-(div psi_v, chi_q)``."""
    pts, w = _rule(2)
    wd = _wdet(vspace.mesh, w)
    g = tabulate(vspace, pts)["grads"]
    chi = tabulate(pspace, pts)["values"]
    return -np.einsum("cq,cqp,cqia->cpai", wd, chi, g, optimize=True).reshape(len(wd), 4, 30)


# --- public assembly ------------------------------------------------------------

def assemble_mass(space: FeSpace, weight: float = 1.0, degree: int | None = None) -> sp.csr_matrix:
    """``weight * (phi_j, phi_i)`` on any of the four spaces."""
    local = local_mass(space, degree)
    if space.family == "P2v":
        local = _vector_block(local)
    n = space.dof_count
    return scatter(weight * local, space.cell_dofs, space.cell_dofs, (n, n))


def assemble_stiffness(space: FeSpace, weight: float = 1.0) -> sp.csr_matrix:
    """``weight * (grad u, grad v)`` on the P2 vector (or P1) space."""
    if space.family not in ("P2v", "P1"):
        raise ValueError("stiffness needs a Lagrange space")
    local = local_stiffness(space)
    if space.family == "P2v":
        local = _vector_block(local)
    n = space.dof_count
    return scatter(weight * local, space.cell_dofs, space.cell_dofs, (n, n))


def assemble_convection(advector: Field) -> sp.csr_matrix:
    """Skew-symmetric convection ``N[i, j] = c(a, psi_j, psi_i)`` with
    ``c(a, u, v) = 1/2 (a . grad u, v) - 1/2 (a . grad v, u)``."""
    space = advector.space
    if space.family != "P2v":
        raise ValueError("advector must live in the velocity space")
    n = space.dof_count
    return scatter(_vector_block(local_convection(advector)), space.cell_dofs, space.cell_dofs, (n, n))


def assemble_div(vspace: FeSpace, pspace: FeSpace) -> sp.csr_matrix:
    """``b[q, v] = -(div psi_v, chi_q)``, shape (n_p, n_u)."""
    return scatter(local_div(vspace, pspace), pspace.cell_dofs, vspace.cell_dofs,
                   (pspace.dof_count, vspace.dof_count))


def assemble_cross_coupling(given: Field | None, pattern: str, *spaces: FeSpace) -> sp.csr_matrix:
    """Coupling matrices between velocity, electric and magnetic unknowns.

    ``spaces`` are the (test, trial) spaces of ``pattern``, or one space when
    both coincide.  ``given`` is the RT0 magnetic field for the patterns that
    carry ``B_given``.
    """
    if pattern not in CROSS_PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {tuple(CROSS_PATTERNS)}")
    expected = CROSS_PATTERNS[pattern]
    if len(spaces) == 1:
        spaces = (spaces[0], spaces[0])
    if tuple(s.family for s in spaces) != expected:
        raise ValueError(f"pattern {pattern!r} needs spaces {expected}, "
                         f"got {tuple(s.family for s in spaces)}")
    rs, cs = spaces
    if pattern in ("ExB.v", "uxBxB.v", "uxB.F") and (given is None or given.space.family != "RT0"):
        raise ValueError(f"pattern {pattern!r} needs an RT0 magnetic field")
    shape = (rs.dof_count, cs.dof_count)
    if pattern == "E.F":
        return assemble_mass(rs)
    if pattern == "curlE.C":
        return scatter(local_curl_rt(cs, rs), rs.cell_dofs, cs.cell_dofs, shape)
    if pattern == "B.curlF":
        local = np.transpose(local_curl_rt(rs, cs), (0, 2, 1))
        return scatter(local, rs.cell_dofs, cs.cell_dofs, shape)
    if pattern == "uxBxB.v":
        return scatter(local_lorentz(given), rs.cell_dofs, cs.cell_dofs, shape)
    if pattern == "ExB.v":
        return scatter(local_exb(given, cs), rs.cell_dofs, cs.cell_dofs, shape)
    # (u x B) . F with u = phi_j e_a and F = N_e equals -(N_e x B)_a phi_j
    local = -np.transpose(local_exb(given, rs), (0, 2, 1))
    return scatter(local, rs.cell_dofs, cs.cell_dofs, shape)


# --- right-hand-side functionals -------------------------------------------------

def load_vector(space: FeSpace, func, t: float, degree: int = DEG_SOURCE) -> np.ndarray:
    """``(f(t), phi_i)`` for an analytic ``f(t, x)``."""
    pts, w = _rule(degree)
    wd = _wdet(space.mesh, w)
    X = physical_points(space.mesh, pts)
    f = np.asarray(func(t, X.reshape(-1, 3))).reshape(X.shape[:2] + (-1,))
    v = tabulate(space, pts)["values"]
    if space.family == "P2v":
        local = np.einsum("cq,cqa,cqi->cai", wd, f, v).reshape(len(wd), 30)
    elif v.ndim == 4:
        local = np.einsum("cq,cqa,cqia->ci", wd, f, v)
    else:
        local = np.einsum("cq,cq,cqi->ci", wd, f[..., 0], v)
    return scatter_vector(local, space.cell_dofs, space.dof_count)


def curl_load_vector(space: FeSpace, func, t: float, degree: int = DEG_SOURCE) -> np.ndarray:
    """``(g(t), curl F_i)`` on N0."""
    pts, w = _rule(degree)
    wd = _wdet(space.mesh, w)
    X = physical_points(space.mesh, pts)
    g = np.asarray(func(t, X.reshape(-1, 3))).reshape(X.shape)
    curl = tabulate(space, pts)["curls"]
    local = np.einsum("cq,cqa,cqia->ci", wd, g, curl)
    return scatter_vector(local, space.cell_dofs, space.dof_count)


# --- block step system ------------------------------------------------------------

@dataclass
class Spaces:
    """The four discrete spaces plus cached state-independent operators."""

    u: FeSpace
    B: FeSpace
    E: FeSpace
    p: FeSpace
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mesh(self):
        return self.u.mesh

    @property
    def sizes(self) -> tuple[int, int, int, int, int]:
        return (self.u.dof_count, self.B.dof_count, self.E.dof_count, self.p.dof_count, 1)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    def matrix(self, name: str) -> sp.csr_matrix:
        if name not in self._cache:
            builders = {
                "Mu": lambda: assemble_mass(self.u),
                "Ku": lambda: assemble_stiffness(self.u),
                "MB": lambda: assemble_mass(self.B),
                "ME": lambda: assemble_mass(self.E),
                "Mp": lambda: assemble_mass(self.p),
                "Bdiv": lambda: assemble_div(self.u, self.p),
                "curlE.C": lambda: assemble_cross_coupling(None, "curlE.C", self.B, self.E),
                "B.curlF": lambda: assemble_cross_coupling(None, "B.curlF", self.E, self.B),
            }
            self._cache[name] = builders[name]()
        return self._cache[name]

    def pressure_mean_row(self) -> np.ndarray:
        """``(chi_q, 1)`` for every pressure basis function."""
        if "mean" not in self._cache:
            self._cache["mean"] = np.asarray(self.matrix("Mp").sum(axis=1)).ravel()
        return self._cache["mean"]

    def split(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        o = self.offsets
        return tuple(x[o[i]:o[i + 1]] for i in range(5))

    def boundary_indices(self) -> np.ndarray:
        o = self.offsets
        return np.concatenate([self.u.boundary_dofs + o[0], self.B.boundary_dofs + o[1],
                               self.E.boundary_dofs + o[2]]).astype(np.int64)


def build_spaces(mesh) -> Spaces:
    from .spaces import build_space

    return Spaces(build_space(mesh, "P2v"), build_space(mesh, "RT0"),
                  build_space(mesh, "N0"), build_space(mesh, "P1"))


@dataclass
class BlockSystem:
    """One linearised solve: operator, right-hand side and Dirichlet record.

    ``matrix``/``rhs`` have constraints applied (constrained rows are
    identity rows); ``raw_matrix``/``raw_rhs`` are the unconstrained ones.
    """

    spaces: Spaces
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    constrained_values: np.ndarray
    raw_matrix: sp.csr_matrix
    raw_rhs: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return self.spaces.offsets


def _positions(keys_sorted: np.ndarray, rows, cols, ncols) -> np.ndarray:
    k = np.asarray(rows, dtype=np.int64) * ncols + np.asarray(cols, dtype=np.int64)
    pos = np.searchsorted(keys_sorted, k)
    return pos


class StepAssembler:
    """Fixed-pattern assembler of the block operator ``[u | B | E | p | lambda]``.

    Momentum rows: ``M_u/k + N(a) + K/Re - s((. x B) x B) - s(E x B) + b^T p``;
    Faraday rows: ``alpha/k M_B B + alpha (curl E, C)``;
    Ohm rows: ``s (u x B, F) - alpha (B, curl F) + s (E, F)``;
    divergence rows ``b(u, q) + lambda (1, q)`` and the zero-mean row.
    """

    def __init__(self, spaces: Spaces, params, k: float):
        if k <= 0:
            raise ValueError("time step must be positive")
        self.spaces, self.params, self.k = spaces, params, k
        o = spaces.offsets
        n = spaces.total
        self.n = n
        s, alpha, Re = params.s, params.alpha, params.Re
        mean = sp.csr_matrix(spaces.pressure_mean_row()[:, None])
        Z = None
        const = [
            [spaces.matrix("Mu") / k + spaces.matrix("Ku") / Re, Z, Z, spaces.matrix("Bdiv").T, Z],
            [Z, spaces.matrix("MB") * (alpha / k), spaces.matrix("curlE.C") * alpha, Z, Z],
            [Z, -alpha * spaces.matrix("B.curlF"), s * spaces.matrix("ME"), Z, Z],
            [spaces.matrix("Bdiv"), Z, Z, Z, mean],
            [Z, Z, Z, mean.T, Z],
        ]
        C = _bmat(const, spaces)
        # variable-block index sets
        ud, Ed = spaces.u.cell_dofs + o[0], spaces.E.cell_dofs + o[2]
        self._idx = {
            "uu": (ud, ud),
            "uE": (ud, Ed),
            "Eu": (Ed, ud),
        }
        rows = [C.tocoo().row, np.arange(n)]
        cols = [C.tocoo().col, np.arange(n)]
        for r, c in self._idx.values():
            rows.append(np.broadcast_to(r[:, :, None], r.shape + (c.shape[1],)).ravel())
            cols.append(np.broadcast_to(c[:, None, :], (c.shape[0], r.shape[1], c.shape[1])).ravel())
        P = sp.csr_matrix((np.ones(sum(len(r) for r in rows)),
                           (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        P.sum_duplicates()
        P.sort_indices()
        self.indptr, self.indices = P.indptr, P.indices
        prow = np.repeat(np.arange(n), np.diff(P.indptr))
        self._keys = prow.astype(np.int64) * n + P.indices
        Cc = C.tocoo()
        self.const_data = np.zeros(len(self._keys))
        np.add.at(self.const_data, _positions(self._keys, Cc.row, Cc.col, n), Cc.data)
        self._maps = {
            name: _positions(self._keys,
                             np.broadcast_to(r[:, :, None], r.shape + (c.shape[1],)),
                             np.broadcast_to(c[:, None, :], (c.shape[0], r.shape[1], c.shape[1])), n)
            for name, (r, c) in self._idx.items()
        }
        # Dirichlet bookkeeping
        self.constrained = spaces.boundary_indices()
        is_c = np.zeros(n, dtype=bool)
        is_c[self.constrained] = True
        self._zero_mask = is_c[prow] | is_c[P.indices]
        self._diag_pos = _positions(self._keys, self.constrained, self.constrained, n)

    def operator(self, advector: Field, B_lag: Field) -> sp.csr_matrix:
        """Unconstrained operator for the given advector and lagged magnetic field."""
        s = self.params.s
        data = self.const_data.copy()
        conv = _vector_block(local_convection(advector))
        uu = conv - s * local_lorentz(B_lag) if s != 0.0 else conv
        data += np.bincount(self._maps["uu"].ravel(), weights=uu.ravel(), minlength=len(data))
        if s != 0.0:
            exb = local_exb(B_lag, self.spaces.E)
            data += np.bincount(self._maps["uE"].ravel(), weights=(-s * exb).ravel(),
                                minlength=len(data))
            data += np.bincount(self._maps["Eu"].ravel(),
                                weights=(-s * np.transpose(exb, (0, 2, 1))).ravel(),
                                minlength=len(data))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def constrain(self, A: sp.csr_matrix, b: np.ndarray, values: np.ndarray):
        """Symmetric elimination of the boundary DOFs with right-hand-side lifting."""
        g = np.zeros(self.n)
        g[self.constrained] = values
        b = b - A @ g
        b[self.constrained] = values
        data = A.data.copy()
        data[self._zero_mask] = 0.0
        data[self._diag_pos] = 1.0
        Ac = sp.csr_matrix((data, A.indices.copy(), A.indptr.copy()), shape=A.shape)
        Ac.eliminate_zeros()
        return Ac, b


def _bmat(blocks, spaces: Spaces) -> sp.csr_matrix:
    sizes = spaces.sizes
    filled = [[b if b is not None else sp.csr_matrix((sizes[i], sizes[j]))
               for j, b in enumerate(row)] for i, row in enumerate(blocks)]
    A = sp.csr_matrix(sp.block_array(filled, format="csr"))
    A.sum_duplicates()
    A.sort_indices()
    return A


def get_assembler(spaces: Spaces, params, k: float) -> StepAssembler:
    key = ("assembler", params, float(k))
    if key not in spaces._cache:
        spaces._cache[key] = StepAssembler(spaces, params, k)
    return spaces._cache[key]


def step_rhs(spaces: Spaces, prev, params, k: float, sources, t_n: float) -> np.ndarray:
    """Unconstrained right-hand side: previous-step terms plus source functionals."""
    o = spaces.offsets
    b = np.zeros(spaces.total)
    b[o[0]:o[1]] = spaces.matrix("Mu") @ prev.u.coefficients / k
    b[o[1]:o[2]] = params.alpha / k * (spaces.matrix("MB") @ prev.B.coefficients)
    if sources is not None:
        if sources.f is not None:
            b[o[0]:o[1]] += load_vector(spaces.u, sources.f, t_n)
        if sources.g_B is not None:
            b[o[1]:o[2]] += params.alpha * load_vector(spaces.B, sources.g_B, t_n)
        if sources.ohm is not None:
            b[o[2]:o[3]] += sources.ohm(spaces.E, t_n, params)
    return b


def dirichlet_values(spaces: Spaces, boundary, t: float) -> np.ndarray:
    """Values for ``spaces.boundary_indices()`` (canonical DOFs of the boundary data)."""
    vals = []
    for space, name in ((spaces.u, "u"), (spaces.B, "B"), (spaces.E, "E")):
        func = getattr(boundary, name, None) if boundary is not None else None
        vals.append(boundary_values(space, func, t)[1])
    return np.concatenate(vals)


def assemble_step_system(prev, iterate, params, k: float, sources, t_n: float,
                         boundary=None, rhs=None, bc_values=None) -> BlockSystem:
    """Assemble the linear system of one backward-Euler solve at time ``t_n``.

    ``prev`` supplies the time-derivative terms (u^{n-1}, B^{n-1});
    ``iterate`` supplies the convection advector and the magnetic field of
    the Lorentz/Ohm couplings (``prev`` for the linearised scheme, the last
    Picard iterate otherwise).  ``boundary`` has optional ``u, B, E``
    callables ``f(t, x)``; None means homogeneous data.  ``rhs`` and
    ``bc_values`` may be passed in precomputed.
    """
    spaces = prev.spaces
    if np.any(spaces.mesh.cell_volumes() <= 0):
        raise ValueError("singular geometry: non-positive cell volume")
    asm = get_assembler(spaces, params, k)
    A = asm.operator(iterate.u, iterate.B)
    b = step_rhs(spaces, prev, params, k, sources, t_n) if rhs is None else rhs
    vals = dirichlet_values(spaces, boundary, t_n) if bc_values is None else bc_values
    Ac, bc = asm.constrain(A, b, vals)
    return BlockSystem(spaces, Ac, bc, asm.constrained, vals, A, b)


def dump_coo(A: sp.spmatrix) -> str:
    """Coordinate text dump, one ``row col value`` per line."""
    C = A.tocoo()
    return "".join(f"{r} {c} {v:.17g}\n" for r, c, v in zip(C.row, C.col, C.data))
