import math

import numpy as np
import pytest

from mhdfem.analysis import (RateTable, curl_L2, norm_L2, observed_orders, seminorm_H1, starred_differences,
                             starred_errors, vert_norm)
from mhdfem.scheme import initial_state
from mhdfem.spaces import cell_divergence, interpolate

ZERO = lambda x: 0 * x[:, 0]  # noqa: E731


def test_norm_of_analytic_function(spaces2):
    # ||sin x - 0||^2 over the unit cube = 1/2 - sin(2)/4; the P2 field is identically zero
    zero = interpolate(spaces2.p, lambda x: ZERO(x))
    f = lambda t, x: np.sin(x[:, 0])  # noqa: E731
    assert norm_L2(zero, f) == pytest.approx(math.sqrt(0.5 - math.sin(2) / 4), rel=1e-8)


def test_norm_of_interpolated_polynomial_is_exact(spaces2):
    # P2 interpolant of (x^2, 0, 0) is exact, so the H1 seminorm error vanishes
    u = interpolate(spaces2.u, lambda x: np.stack([x[:, 0] ** 2, ZERO(x), ZERO(x)], -1))
    g = lambda t, x: np.einsum("n,ij->nij", 2 * x[:, 0], np.diag([1.0, 0, 0]))  # noqa: E731
    assert seminorm_H1(u, g) <= 1e-13
    assert seminorm_H1(u) == pytest.approx(math.sqrt(4 / 3), rel=1e-13)


def test_curl_norm(spaces2):
    # N0 interpolant of (-y, x, 0) is exact; its curl is (0, 0, 2)
    E = interpolate(spaces2.E, lambda x: np.stack([-x[:, 1], x[:, 0], ZERO(x)], -1))
    assert curl_L2(E) == pytest.approx(2.0, rel=1e-13)


def test_vert_norm():
    assert vert_norm([1.0] * 4, 0.25) == pytest.approx(1.0)
    assert vert_norm([3.0, 4.0], 1.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        vert_norm([], 0.1)


def test_exact_trajectory_self_difference(spaces2, exact):
    traj = [initial_state(spaces2, exact, n * 0.1) for n in range(3)]
    d = starred_differences(traj, traj, 0.1)
    assert d.as_dict() == {"u": 0.0, "B": 0.0, "E": 0.0, "p": 0.0}
    with pytest.raises(ValueError):
        starred_differences(traj, traj[:2], 0.1)


def test_starred_errors_of_interpolant_small(spaces2, exact):
    traj = [initial_state(spaces2, exact, n * 0.1) for n in range(3)]
    err = starred_errors(traj, exact, 0.1)
    # interpolation error only: first order in h for B, E; order 2 for u (L2) / order 2 in H1 for P2
    assert err.u < 0.05 and err.B < 0.2 and err.E < 0.2 and err.p < 0.05


def test_divergence_of_linear_field(spaces2):
    B = interpolate(spaces2.B, lambda x: np.stack([x[:, 0], ZERO(x), ZERO(x)], -1))
    np.testing.assert_allclose(cell_divergence(B), 1.0, rtol=1e-12)


def test_observed_orders():
    assert observed_orders([0.5, 0.25, 0.125], [4.0, 1.0, 0.25]) == pytest.approx([2.0, 2.0])
    assert math.isnan(observed_orders([0.5, 0.25], [0.0, 1.0])[0])
    t = RateTable([0.125, 0.5, 0.25], {"u": [0.25, 4.0, 1.0]})
    assert t.sizes == [0.5, 0.25, 0.125]
    assert t.rates["u"] == pytest.approx([2.0, 2.0]) and t.slopes["u"] == pytest.approx(2.0)
