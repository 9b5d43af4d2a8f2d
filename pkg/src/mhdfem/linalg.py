"""Sparse kernels and the saddle-point solver.

The direct path is SuperLU on a matrix symmetrically permuted by a METIS
nested-dissection ordering (COLAMD when pymetis is missing).  The iterative
path is restarted GMRES with an incomplete-LU preconditioner.  A
:class:`LinearSolver` additionally keeps its last factorisation and reuses it
as a GMRES preconditioner for nearby matrices (Picard iterates, later time
steps), refactorising when that stops paying off.

Every solve is checked against a residual recomputed with :func:`spmv`,
never the solver's own report.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import pymetis
except ImportError:  # pragma: no cover - exercised only without pymetis
    pymetis = None

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
METHODS = ("direct", "iterative")
# singular but consistent systems (e.g. an undetermined pressure on a one-cell
# mesh) are retried with a dense least-squares solve up to this size
DENSE_FALLBACK_MAX = 4000


@dataclass
class SolveStats:
    method: str  # direct | iterative
    iterations: int
    residual: float  # relative, recomputed independently
    seconds: float
    factorized: bool = False


class SolverError(RuntimeError):
    """Linear solve failed; carries the stats of the failed attempt."""

    def __init__(self, message: str, stats: SolveStats):
        super().__init__(f"{message} ({stats})")
        self.stats = stats


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """``y = A x`` straight from the CSR arrays."""
    A = sp.csr_matrix(A)
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[1],):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    return np.bincount(rows, weights=A.data * x[A.indices], minlength=A.shape[0])


def relative_residual(A, x, b) -> float:
    r = b - spmv(A, x)
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / (nb if nb > 0 else 1.0))


def fill_reducing_order(A: sp.spmatrix) -> np.ndarray | None:
    """Nested-dissection permutation of the symmetrised pattern, or None."""
    if pymetis is None or A.shape[0] < 64:
        return None
    G = sp.csr_matrix((abs(A) + abs(A.T)))
    G.setdiag(0)
    G.eliminate_zeros()
    perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(G.indptr, G.indices))
    return np.asarray(perm, dtype=np.int64)


class _Factor:
    """LU factorisation with an optional symmetric pre-permutation."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        self.perm = fill_reducing_order(A)
        try:
            if self.perm is None:
                self.lu = spla.splu(A, permc_spec="COLAMD")
            else:
                Ap = sp.csc_matrix(A[self.perm][:, self.perm])
                self.lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.01,
                                    options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"factorisation failed: {exc}",
                              SolveStats("direct", 0, np.inf, 0.0, True)) from exc
        self.shape = A.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(b[self.perm])
        return x


class LinearSolver:
    """Stateful solver that reuses its last LU factorisation.

    Parameters
    ----------
    tol : float
        Required relative residual ``||b - A x|| / ||b||``.
    method : {"direct", "iterative"}
        ``direct`` factorises (or reuses a factorisation as preconditioner);
        ``iterative`` is GMRES with an ILU preconditioner.
    reuse : bool
        Allow LU-preconditioned GMRES with a stale factorisation.
    max_reuse_iterations : int
        Refactorise when preconditioned GMRES needs more iterations.
    """

    def __init__(self, tol: float = DEFAULT_TOL, method: str = "direct", reuse: bool = True,
                 max_reuse_iterations: int = 25):
        if method not in METHODS:
            raise ValueError(f"unknown solver method {method!r}; expected one of {METHODS}")
        self.tol = tol
        self.method = method
        self.reuse = reuse
        self.max_reuse_iterations = max_reuse_iterations
        self._factor: _Factor | None = None
        self.history: list[SolveStats] = []

    def reset(self):
        self._factor = None

    def _finish(self, A, x, b, stats: SolveStats) -> tuple[np.ndarray, SolveStats]:
        stats.residual = relative_residual(A, x, b)
        self.history.append(stats)
        if not np.all(np.isfinite(x)) or not stats.residual <= self.tol:
            raise SolverError("residual above tolerance", stats)
        return x, stats

    def _gmres(self, A, b, M, x0, rtol, maxiter):
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(A, b, x0=x0, rtol=rtol, atol=0.0, restart=maxiter, maxiter=1,
                             M=M, callback=cb, callback_type="pr_norm")
        return x, info, count[0]

    def solve(self, A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None):
        A = sp.csr_matrix(A)
        b = np.asarray(b, dtype=float)
        if A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise ValueError(f"bad shapes: matrix {A.shape}, rhs {b.shape}")
        t0 = time.perf_counter()
        if not np.any(b):
            return self._finish(A, np.zeros_like(b), b, SolveStats(self.method, 0, 0.0, 0.0))
        if self.method == "iterative":
            return self._solve_ilu(A, b, x0, t0)

        # a stale factorisation as preconditioner
        if self.reuse and self._factor is not None and self._factor.shape == A.shape:
            M = spla.LinearOperator(A.shape, self._factor.solve, dtype=float)
            x, info, its = self._gmres(A, b, M, x0, 0.05 * self.tol, self.max_reuse_iterations)
            res = relative_residual(A, x, b)
            if res <= self.tol and np.all(np.isfinite(x)):
                return self._finish(A, x, b, SolveStats("direct", its, res,
                                                        time.perf_counter() - t0))
            log.debug("stale LU insufficient after %d its (res %.2e); refactorising", its, res)

        try:
            self._factor = _Factor(A)
        except SolverError:
            self._factor = None
            if A.shape[0] > DENSE_FALLBACK_MAX:
                raise
            return self._dense_fallback(A, b, t0)
        x = self._factor.solve(b)
        its = 1
        res = relative_residual(A, x, b)
        while res > 1e-3 * self.tol and its <= 3 and np.isfinite(res):
            x = x + self._factor.solve(b - spmv(A, x))
            its += 1
            res = relative_residual(A, x, b)
        return self._finish(A, x, b, SolveStats("direct", its, res, time.perf_counter() - t0, True))

    def _dense_fallback(self, A, b, t0):
        log.debug("sparse factorisation failed; dense least-squares on %d unknowns", A.shape[0])
        x = sla.lstsq(A.toarray(), b, lapack_driver="gelsd")[0]
        return self._finish(A, x, b, SolveStats("direct", 1, 0.0, time.perf_counter() - t0, True))

    def _solve_ilu(self, A, b, x0, t0):
        try:
            ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=20)
        except RuntimeError as exc:
            if A.shape[0] <= DENSE_FALLBACK_MAX:
                return self._dense_fallback(A, b, t0)
            raise SolverError(f"ILU breakdown: {exc}", SolveStats("iterative", 0, np.inf, 0.0)) from exc
        M = spla.LinearOperator(A.shape, ilu.solve, dtype=float)
        x = x0
        its = 0
        for _ in range(10):
            x, info, n = self._gmres(A, b, M, x, 1e-2 * self.tol, 200)
            its += n
            if relative_residual(A, x, b) <= self.tol:
                break
        return self._finish(A, x, b, SolveStats("iterative", its, 0.0, time.perf_counter() - t0))


def solve(A: sp.spmatrix, b: np.ndarray, tol: float = DEFAULT_TOL,
          method: str = "direct") -> tuple[np.ndarray, SolveStats]:
    """One-shot solve of ``A x = b`` to relative residual ``tol``.

    Raises
    ------
    SolverError
        On breakdown or when the recomputed residual stays above ``tol``.
    """
    return LinearSolver(tol, method, reuse=False).solve(A, b)
