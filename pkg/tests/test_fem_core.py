import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdfem import fem_core
from mhdfem.fem_core import (REF_VERTICES, duality_matrix, eval_basis, push_forward, quadrature_rule,
                             reference_basis)
from mhdfem.mesh import LOCAL_FACES


def test_degree_one_is_centroid():
    q = quadrature_rule(1)
    np.testing.assert_allclose(q.points, [[0.25, 0.25, 0.25]])
    np.testing.assert_allclose(q.weights, [1 / 6])


@pytest.mark.parametrize("d", range(1, fem_core.MAX_DEGREE + 1))
def test_weights_sum_and_positive(d):
    q = quadrature_rule(d)
    assert math.isclose(q.weights.sum(), 1 / 6, rel_tol=1e-14)
    assert np.all(q.weights > 0)
    lam = fem_core.barycentric(q.points)
    assert np.all(lam > 0)


def test_xy_moment():
    q = quadrature_rule(2)
    assert math.isclose(np.sum(q.weights * q.points[:, 0] * q.points[:, 1]), 1 / 120, rel_tol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8))
def test_monomials_exact(a, b, c):
    d = a + b + c
    if d == 0 or d > fem_core.MAX_DEGREE:
        return
    q = quadrature_rule(max(d, 1))
    exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(d + 3)
    got = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b * q.points[:, 2] ** c)
    assert math.isclose(got, exact, rel_tol=1e-12)


@pytest.mark.parametrize("d", [0, 9, 2.5])
def test_bad_degree(d):
    with pytest.raises(ValueError):
        quadrature_rule(d)


def test_unknown_family():
    with pytest.raises(ValueError):
        reference_basis("Q1")
    with pytest.raises(ValueError):
        eval_basis("Q1", [[0.1, 0.1, 0.1]])


@pytest.mark.parametrize("family", ["P1", "P2", "N0", "RT0"])
def test_duality_is_identity(family):
    np.testing.assert_allclose(duality_matrix(family), np.eye(reference_basis(family).dof_count),
                               atol=1e-13)


def test_p2_kronecker_at_nodes():
    nodes = list(REF_VERTICES) + [0.5 * (REF_VERTICES[a] + REF_VERTICES[b])
                                  for a, b in fem_core.LOCAL_EDGES]
    v = eval_basis("P2", np.array(nodes))["values"]
    np.testing.assert_allclose(v, np.eye(10), atol=1e-15)


def test_n0_curl_constant(rng):
    pts = rng.dirichlet(np.ones(4), 7)[:, 1:]
    c = eval_basis("N0", pts)["curls"]
    np.testing.assert_allclose(c, np.broadcast_to(c[0], c.shape), atol=1e-15)


def test_rt0_flux_only_through_own_face():
    st_pts, w = fem_core.triangle_rule(4)
    for i, (a, b, c) in enumerate(LOCAL_FACES):
        e1, e2 = REF_VERTICES[b] - REF_VERTICES[a], REF_VERTICES[c] - REF_VERTICES[a]
        n = np.cross(e1, e2)
        if n @ (REF_VERTICES[a] - REF_VERTICES[i]) < 0:
            n = -n
        pts = REF_VERTICES[a] + st_pts[:, :1] * e1 + st_pts[:, 1:] * e2
        vals = eval_basis("RT0", pts)["values"]
        flux = np.einsum("q,qja,a->j", w, vals, n)
        expected = np.zeros(4)
        expected[i] = 1.0
        np.testing.assert_allclose(flux, expected, atol=1e-14)


def _random_jacobian(rng):
    while True:
        J = rng.normal(size=(3, 3))
        if abs(np.linalg.det(J)) > 0.2:
            return J


def test_identity_map_leaves_values(rng):
    pts = rng.dirichlet(np.ones(4), 5)[:, 1:]
    for fam in ("P1", "P2", "N0", "RT0"):
        ref = eval_basis(fam, pts)
        out = push_forward(fam, np.eye(3), ref)
        for k, v in ref.items():
            np.testing.assert_allclose(out[k], v, atol=1e-15)


def _physical(fam, J, x0, X):
    """Physical basis values at physical points X by pulling back."""
    xi = np.linalg.solve(J, (X - x0).T).T
    return push_forward(fam, J, eval_basis(fam, xi))


def test_curl_commutes_with_covariant_piola(rng):
    J, x0 = _random_jacobian(rng), rng.normal(size=3)
    h = 1e-6
    for _ in range(5):
        xi = rng.dirichlet(np.ones(4))[1:]
        X = x0 + J @ xi
        analytic = _physical("N0", J, x0, X[None])["curls"][0]
        # central differences of the pushed-forward values
        d = np.zeros((3, 6, 3))  # d[j, i, a] = d/dx_j N_i,a
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            d[j] = (_physical("N0", J, x0, (X + e)[None])["values"][0]
                    - _physical("N0", J, x0, (X - e)[None])["values"][0]) / (2 * h)
        curl = np.stack([d[1, :, 2] - d[2, :, 1], d[2, :, 0] - d[0, :, 2], d[0, :, 1] - d[1, :, 0]], axis=-1)
        # the fields are affine, so central differences are exact up to rounding
        np.testing.assert_allclose(analytic, curl, atol=1e-8 * max(1, np.abs(curl).max()))


def test_div_commutes_with_contravariant_piola(rng):
    J, x0 = _random_jacobian(rng), rng.normal(size=3)
    ref = eval_basis("RT0", np.array([[0.2, 0.3, 0.1]]))
    out = push_forward("RT0", J, ref)
    np.testing.assert_allclose(out["divs"][0], 6.0 / np.linalg.det(J) * np.ones(4), rtol=1e-13)
    h = 1e-6
    X = x0 + J @ np.array([0.2, 0.3, 0.1])
    div = 0.0
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        div = div + (_physical("RT0", J, x0, (X + e)[None])["values"][0][:, j]
                     - _physical("RT0", J, x0, (X - e)[None])["values"][0][:, j]) / (2 * h)
    np.testing.assert_allclose(div, out["divs"][0], rtol=1e-7)


def test_degenerate_jacobian_rejected():
    J = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    with pytest.raises(ValueError):
        push_forward("N0", J, eval_basis("N0", np.array([[0.1, 0.1, 0.1]])))


def test_batched_push_forward_matches_single(rng):
    Js = np.stack([_random_jacobian(rng) for _ in range(3)])
    ref = eval_basis("N0", rng.dirichlet(np.ones(4), 4)[:, 1:])
    batched = push_forward("N0", Js, ref)
    for c in range(3):
        single = push_forward("N0", Js[c], ref)
        np.testing.assert_allclose(batched["values"][c], single["values"], rtol=1e-14)
        np.testing.assert_allclose(batched["curls"][c], single["curls"], rtol=1e-14)
