import numpy as np
import pytest
import scipy.sparse as sp

from mhdfem import assembly
from mhdfem.assembly import (assemble_convection, assemble_cross_coupling, assemble_div, assemble_mass,
                             assemble_stiffness, assemble_step_system, build_spaces, get_assembler)
from mhdfem.fem_core import REF_VERTICES
from mhdfem.mesh import build_box_mesh, build_from_cells
from mhdfem.oracle import Oracle, rel_diff
from mhdfem.scheme import ProblemParams, State, initial_state, zero_state
from mhdfem.spaces import Field, interpolate


@pytest.fixture(scope="module")
def one_cell():
    return build_from_cells(REF_VERTICES.copy(), np.array([[0, 1, 2, 3]]))


@pytest.fixture(scope="module")
def one_cell_spaces(one_cell):
    return build_spaces(one_cell)


def _vec(f):
    return lambda x: np.stack([f[0](x), f[1](x), f[2](x)], axis=-1)


ZERO = lambda x: 0 * x[:, 0]  # noqa: E731


def test_reference_p1_mass(one_cell_spaces):
    M = assemble_mass(one_cell_spaces.p).toarray()
    expected = np.full((4, 4), 1 / 120) + np.eye(4) / 120
    np.testing.assert_allclose(M, expected, rtol=1e-14)


def test_zero_weight(spaces1):
    assert assemble_mass(spaces1.E, weight=0.0).count_nonzero() == 0
    assert assemble_stiffness(spaces1.u, weight=0.0).count_nonzero() == 0


@pytest.mark.parametrize("name", ["u", "B", "E", "p"])
def test_mass_spd(spaces2, rng, name):
    M = assemble_mass(getattr(spaces2, name))
    assert abs(M - M.T).max() <= 1e-15 * abs(M).max()
    for _ in range(5):
        x = rng.standard_normal(M.shape[0])
        assert x @ (M @ x) > 0


def test_stiffness_kernel_and_linear_field(spaces2):
    K = assemble_stiffness(spaces2.u, weight=2.5)
    assert abs(K - K.T).max() <= 1e-13
    const = interpolate(spaces2.u, lambda x: np.broadcast_to([1.0, -2.0, 0.5], x.shape)).coefficients
    assert np.abs(K @ const).max() <= 1e-12
    lin = interpolate(spaces2.u, _vec((lambda x: x[:, 0], ZERO, ZERO))).coefficients
    assert np.isclose(lin @ K @ lin, 2.5, rtol=1e-12)
    with pytest.raises(ValueError):
        assemble_stiffness(spaces2.E)


def test_convection_skew_and_zero(spaces2, rng):
    a = Field(spaces2.u, rng.standard_normal(spaces2.u.dof_count))
    N = assemble_convection(a)
    assert abs(N + N.T).max() <= 1e-12 * abs(N).max()
    assert assemble_convection(Field(spaces2.u, np.zeros(spaces2.u.dof_count))).count_nonzero() == 0
    with pytest.raises(ValueError):
        assemble_convection(Field(spaces2.E, np.zeros(spaces2.E.dof_count)))


def test_convection_one_cell_example(one_cell_spaces):
    sp_ = one_cell_spaces
    phi = interpolate(sp_.u, _vec((lambda x: 1 + 0 * x[:, 0], ZERO, ZERO)))
    u = interpolate(sp_.u, _vec((lambda x: x[:, 1], ZERO, ZERO))).coefficients
    v = interpolate(sp_.u, _vec((ZERO, lambda x: x[:, 0], ZERO))).coefficients
    N = assemble_convection(phi)
    # 1/2 int (d_x u . v - d_x v . u) = 1/2 int (0 - (0, 1, 0).(y, 0, 0)) = 0
    assert abs(v @ N @ u) <= 1e-15
    # a non-trivial pair: u = (x^2, 0, 0), v = (y, 0, 0): 1/2 int 2x y - 0 over the unit simplex = 1/120
    u2 = interpolate(sp_.u, _vec((lambda x: x[:, 0] ** 2, ZERO, ZERO))).coefficients
    v2 = interpolate(sp_.u, _vec((lambda x: x[:, 1], ZERO, ZERO))).coefficients
    assert np.isclose(v2 @ N @ u2, 1 / 120, rtol=1e-13)


def test_divergence_of_exact_velocity(spaces2, exact):
    u = interpolate(spaces2.u, exact.u, 0.3).coefficients
    assert np.linalg.norm(spaces2.matrix("Bdiv") @ u) <= 1e-12


def test_divergence_rows_sum(spaces2, rng):
    Bd = assemble_div(spaces2.u, spaces2.p)
    u = rng.standard_normal(spaces2.u.dof_count)
    u[spaces2.u.boundary_dofs] = 0.0
    assert abs((Bd @ u).sum()) <= 1e-12
    lin = interpolate(spaces2.u, _vec((lambda x: x[:, 0], ZERO, ZERO))).coefficients
    assert np.isclose((Bd @ lin).sum(), -1.0, rtol=1e-13)


def test_ohm_mass_block_and_curl_transpose(spaces2):
    EF = assemble_cross_coupling(None, "E.F", spaces2.E)
    assert rel_diff(EF, assemble_mass(spaces2.E)) == 0.0
    C = assemble_cross_coupling(None, "curlE.C", spaces2.B, spaces2.E)
    Bc = assemble_cross_coupling(None, "B.curlF", spaces2.E, spaces2.B)
    assert rel_diff(Bc, C.T) <= 1e-15


def test_cross_coupling_validation(spaces2):
    with pytest.raises(ValueError):
        assemble_cross_coupling(None, "nope", spaces2.E)
    with pytest.raises(ValueError):
        assemble_cross_coupling(None, "ExB.v", spaces2.u, spaces2.E)
    with pytest.raises(ValueError):
        assemble_cross_coupling(None, "curlE.C", spaces2.E, spaces2.B)


def test_uxb_one_cell_constant_field(one_cell, one_cell_spaces):
    sp_ = one_cell_spaces
    B = interpolate(sp_.B, lambda x: np.broadcast_to([0.0, 0.0, 1.0], x.shape))
    U = assemble_cross_coupling(B, "uxB.F", sp_.E, sp_.u)
    ref = Oracle(one_cell).uxb(B.coefficients)
    assert rel_diff(U, ref) <= 1e-13


def test_lorentz_negative_semidefinite(spaces2, rng):
    B = Field(spaces2.B, rng.standard_normal(spaces2.B.dof_count))
    L = assemble_cross_coupling(B, "uxBxB.v", spaces2.u)
    assert abs(L - L.T).max() <= 1e-12 * abs(L).max()
    for _ in range(5):
        u = rng.standard_normal(L.shape[0])
        assert u @ L @ u <= 1e-12  # ((u x B) x B) . u = -|u x B|^2


def test_zero_problem_gives_zero_solution(spaces1, params):
    from mhdfem.linalg import solve

    st = zero_state(spaces1)
    sysm = assemble_step_system(st, st, params, 0.1, None, 0.1)
    assert sysm.matrix.shape == (127, 127)
    x, stats = solve(sysm.matrix, sysm.rhs)
    assert not x.any() and stats.residual == 0.0


def test_system_size_unit_cube(spaces1):
    assert spaces1.total == 81 + 18 + 19 + 8 + 1 == 127
    assert list(spaces1.offsets) == [0, 81, 99, 118, 126, 127]


def test_step_operator_matches_block_assembly(spaces2, rng):
    params = ProblemParams(Re=3.0, Rm=2.0, s=0.5)
    k = 0.1
    a = Field(spaces2.u, rng.standard_normal(spaces2.u.dof_count))
    B = Field(spaces2.B, rng.standard_normal(spaces2.B.dof_count))
    A = get_assembler(spaces2, params, k).operator(a, B)
    s, al = params.s, params.alpha
    mean = sp.csr_matrix(spaces2.pressure_mean_row()[:, None])
    blocks = [
        [spaces2.matrix("Mu") / k + spaces2.matrix("Ku") / params.Re + assemble_convection(a)
         - s * assemble_cross_coupling(B, "uxBxB.v", spaces2.u), None,
         -s * assemble_cross_coupling(B, "ExB.v", spaces2.u, spaces2.E), spaces2.matrix("Bdiv").T, None],
        [None, al / k * spaces2.matrix("MB"), al * spaces2.matrix("curlE.C"), None, None],
        [s * assemble_cross_coupling(B, "uxB.F", spaces2.E, spaces2.u), -al * spaces2.matrix("B.curlF"),
         s * spaces2.matrix("ME"), None, None],
        [spaces2.matrix("Bdiv"), None, None, None, mean],
        [None, None, None, mean.T, None],
    ]
    sizes = spaces2.sizes
    full = sp.block_array([[b if b is not None else sp.csr_matrix((sizes[i], sizes[j]))
                            for j, b in enumerate(row)] for i, row in enumerate(blocks)])
    assert rel_diff(A, full) <= 1e-14


def test_dirichlet_elimination(spaces2, exact, params):
    prev = initial_state(spaces2, exact, 0.0)
    sysm = assemble_step_system(prev, prev, params, 0.05, exact.sources(params), 0.05, exact.boundary())
    A, b, c = sysm.matrix, sysm.rhs, sysm.constrained
    rows = A[c]
    assert (rows - sp.csr_matrix((np.ones(len(c)), (np.arange(len(c)), c)), shape=rows.shape)).count_nonzero() == 0
    free = np.setdiff1d(np.arange(A.shape[0]), c)
    assert A[free][:, c].count_nonzero() == 0
    np.testing.assert_array_equal(b[c], sysm.constrained_values)


def test_consistency_residual_decreases_with_h(exact, params):
    """Residual of the assembled step at interpolated exact data shrinks with h (fixed small k)."""
    k = 1e-3
    res = []
    for n in (2, 4, 8):
        spaces = build_spaces(build_box_mesh(n, n, n))
        prev = initial_state(spaces, exact, 0.0)
        new = initial_state(spaces, exact, k)
        sysm = assemble_step_system(prev, new, params, k, exact.sources(params), k, exact.boundary())
        r = sysm.raw_rhs - sysm.raw_matrix @ new.vector()
        r[sysm.constrained] = 0.0
        res.append(np.linalg.norm(r) / np.linalg.norm(sysm.raw_rhs))
    # observed ratio ~0.55 per halving of h
    assert res[1] < 0.7 * res[0] and res[2] < 0.7 * res[1]


def test_dump_coo_deterministic(spaces1):
    M = spaces1.matrix("ME")
    assert assembly.dump_coo(M) == assembly.dump_coo(assemble_mass(spaces1.E))
    first = assembly.dump_coo(M).splitlines()[0].split()
    assert len(first) == 3


def test_singular_geometry_rejected(mesh1, params):
    flat = mesh1.vertices.copy()
    flat[:, 2] = 0.0
    with pytest.raises(ValueError):
        spaces = build_spaces(build_from_cells(flat, mesh1.cells))
        st = zero_state(spaces)
        assemble_step_system(st, st, params, 0.1, None, 0.1)


def test_state_roundtrip(spaces1, rng):
    x = rng.standard_normal(spaces1.total)
    st = State.from_vector(spaces1, 0.0, x)
    np.testing.assert_array_equal(st.vector(), x)
