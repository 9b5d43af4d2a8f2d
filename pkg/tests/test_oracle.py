import math

import numpy as np
import pytest

from mhdfem.assembly import assemble_mass, build_spaces
from mhdfem.fem_core import REF_VERTICES
from mhdfem.mesh import build_box_mesh, build_from_cells
from mhdfem.oracle import (CheckResult, Oracle, check_curl_inclusion, check_oracle, check_quadrature,
                           collapsed_rule, jittered_mesh, rel_diff)


def test_collapsed_rule_exact_on_monomials():
    bary, w = collapsed_rule()
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    x = bary[:, 1:]
    # int over the unit simplex of x^a y^b z^c = a! b! c! / (a+b+c+3)!, times 6 for unit total weight
    for a, b, c in [(0, 0, 0), (2, 1, 0), (3, 3, 3), (9, 0, 0), (4, 2, 3)]:
        exact = 6 * math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
        assert np.sum(w * x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c) == pytest.approx(exact, rel=1e-13)


def test_oracle_reference_cell_mass():
    mesh = build_from_cells(REF_VERTICES.copy(), np.array([[0, 1, 2, 3]]))
    M = Oracle(mesh).mass("P1")
    np.testing.assert_allclose(M, (np.ones((4, 4)) + np.eye(4)) / 120, rtol=1e-13)


def test_oracle_detects_perturbation(spaces2):
    ref = Oracle(spaces2.mesh).mass("N0")
    lib = assemble_mass(spaces2.E).toarray()
    assert rel_diff(lib, ref) <= 1e-12
    lib[3, 5] += 1e-9
    assert rel_diff(lib, ref) > 1e-12


@pytest.mark.parametrize("label, mesh", [("box-1", build_box_mesh(1, 1, 1)),
                                         ("box-2x1x1", build_box_mesh(2, 1, 1, extents=(2.0, 0.5, 1.5))),
                                         ("jittered-2", jittered_mesh(2))])
def test_check_oracle(label, mesh):
    results = check_oracle(mesh, label, seed=3)
    assert len(results) > 15
    failed = [r.line() for r in results if not r.passed]
    assert not failed, failed


@pytest.mark.parametrize("mesh", [build_box_mesh(2, 2, 2), jittered_mesh(2, seed=11)])
def test_curl_inclusion(mesh):
    results = check_curl_inclusion(mesh, "m")
    assert results and all(r.passed for r in results), [r.line() for r in results]


def test_quadrature_checks():
    assert all(r.passed for r in check_quadrature())


def test_check_result_line():
    assert CheckResult("x", 1e-13, 1e-12).line().startswith("PASS")
    bad = CheckResult("x", float("nan"), 1e-12)
    assert not bad.passed and bad.line().startswith("FAIL")


def test_jittered_mesh_keeps_boundary():
    m = jittered_mesh(2)
    base = build_box_mesh(2, 2, 2)
    np.testing.assert_array_equal(m.vertices[base.boundary_vertices], base.vertices[base.boundary_vertices])
    assert np.all(np.abs(m.cell_volumes()) > 1e-4)
    build_spaces(m)
