import numpy as np
import pytest
import scipy.sparse as sp

from mhdfem.assembly import assemble_step_system
from mhdfem.linalg import LinearSolver, SolverError, relative_residual, solve, spmv
from mhdfem.scheme import initial_state


def test_identity():
    b = np.arange(1.0, 6.0)
    x, stats = solve(sp.identity(5, format="csr"), b)
    np.testing.assert_array_equal(x, b)
    assert stats.residual == 0.0


def test_spmv_matches_dense(rng):
    A = rng.standard_normal((10, 10))
    A[rng.random((10, 10)) < 0.5] = 0.0
    x = rng.standard_normal(10)
    np.testing.assert_allclose(spmv(sp.csr_matrix(A), x), A @ x, rtol=1e-14, atol=1e-14)
    with pytest.raises(ValueError):
        spmv(sp.csr_matrix(A), x[:3])


def test_poisson_tridiagonal():
    n = 200
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    i = np.arange(1, n + 1)
    x, stats = solve(A, np.ones(n))
    np.testing.assert_allclose(x, i * (n + 1 - i) / 2, rtol=1e-10)
    assert stats.residual <= 1e-10


def test_mms_step_system_residual(spaces1, exact, params):
    prev = initial_state(spaces1, exact, 0.0)
    sysm = assemble_step_system(prev, prev, params, 0.1, exact.sources(params), 0.1, exact.boundary())
    assert sysm.matrix.shape == (127, 127)
    for method in ("direct", "iterative"):
        x, stats = solve(sysm.matrix, sysm.rhs, method=method)
        assert stats.residual <= 1e-10
        assert relative_residual(sysm.matrix, x, sysm.rhs) == pytest.approx(stats.residual, abs=1e-16)


def test_singular_matrix_raises():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve(A, np.array([1.0, 0.0]))


def test_reuse_preconditioner(spaces2, exact, params):
    """A stale factorisation serves as preconditioner for a nearby matrix."""
    solver = LinearSolver()
    prev = initial_state(spaces2, exact, 0.0)
    A1 = assemble_step_system(prev, prev, params, 0.1, exact.sources(params), 0.1, exact.boundary())
    solver.solve(A1.matrix, A1.rhs)
    assert solver.history[-1].factorized
    nxt = initial_state(spaces2, exact, 0.1)
    A2 = assemble_step_system(prev, nxt, params, 0.1, exact.sources(params), 0.1, exact.boundary())
    x, stats = solver.solve(A2.matrix, A2.rhs)
    assert not stats.factorized and stats.residual <= 1e-10
    assert relative_residual(A2.matrix, x, A2.rhs) <= 1e-10


def test_bad_arguments():
    with pytest.raises(ValueError):
        LinearSolver(method="magic")
    with pytest.raises(ValueError):
        solve(sp.identity(3, format="csr"), np.ones(4))
