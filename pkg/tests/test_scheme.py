import numpy as np
import pytest

from mhdfem.analysis import energy, energy_report
from mhdfem.assembly import build_spaces
from mhdfem.errors import PicardError, RunFailure
from mhdfem.experiments import decay_state
from mhdfem.mesh import build_box_mesh
from mhdfem.scheme import (ProblemParams, State, TimeConfig, initial_state, run, step_linearized,
                           step_picard, zero_state)
from mhdfem.spaces import cell_divergence, discrete_curl_matrix


@pytest.fixture(scope="module")
def decay2(spaces2):
    return decay_state(spaces2)


@pytest.mark.parametrize("scheme", ["linearized", "picard"])
def test_zero_state_stays_zero(spaces2, params, scheme):
    traj, rep = run(zero_state(spaces2), params, TimeConfig(0.1, 0.3, scheme))
    assert len(traj) == 4
    assert all(not st.vector().any() for st in traj)
    assert rep.energy == [0.0] * 4


@pytest.mark.parametrize("scheme", ["linearized", "picard"])
def test_decay_energy_and_gauss(decay2, params, scheme):
    traj, rep = run(decay2, params, TimeConfig(0.05, 0.25, scheme))
    e = rep.energy
    assert all(b < a for a, b in zip(e, e[1:]))
    assert min(rep.energy_margin) >= -1e-9 * e[0]
    assert max(rep.divB_max) <= 1e-11
    assert max(rep.solve_residual_max) <= 1e-10
    er = energy_report(rep)
    assert er.monotone
    np.testing.assert_allclose(er.margin, rep.energy_margin, atol=1e-13)


@pytest.mark.parametrize("scheme", ["linearized", "picard"])
def test_margin_equals_numerical_dissipation(decay2, params, scheme):
    """Backward Euler: E0 - E_n - dissipation = sum |u^m - u^{m-1}|^2 + alpha |B^m - B^{m-1}|^2."""
    traj, rep = run(decay2, params, TimeConfig(0.05, 0.2, scheme))
    Mu, MB = decay2.spaces.matrix("Mu"), decay2.spaces.matrix("MB")
    acc = [0.0]
    for a, b in zip(traj, traj[1:]):
        du = b.u.coefficients - a.u.coefficients
        dB = b.B.coefficients - a.B.coefficients
        acc.append(acc[-1] + du @ Mu @ du + params.alpha * (dB @ MB @ dB))
    # the step equations hold to the solver tolerance; Picard also to its increment tolerance
    np.testing.assert_allclose(rep.energy_margin, acc, rtol=1e-6, atol=1e-9)


def test_faraday_identity_coefficientwise(decay2, params):
    new, info = step_linearized(decay2, params, 0.05)
    D = discrete_curl_matrix(decay2.spaces.E, decay2.spaces.B)
    d = new.B.coefficients - decay2.B.coefficients + 0.05 * (D @ new.E.coefficients)
    assert np.abs(d).max() <= 1e-10
    assert info.faraday_residual <= 1e-10 and info.div_residual <= 1e-9
    assert np.abs(cell_divergence(new.B)).max() <= 1e-11


def test_picard_nonlinear_residual_and_guess(decay2, params):
    a, info_a = step_picard(decay2, params, 0.05, tol=1e-10)
    assert info_a.nonlinear_residual <= 10 * 1e-10
    assert info_a.increments[-1] <= 1e-10
    b, info_b = step_picard(decay2, params, 0.05, tol=1e-10, guess=a)
    assert info_b.picard_iterations <= 2
    np.testing.assert_allclose(b.vector(), a.vector(), atol=1e-9)


def test_picard_iteration_count_mms(exact, params):
    spaces = build_spaces(build_box_mesh(4, 4, 4))
    st = initial_state(spaces, exact, 0.0)
    traj, rep = run(st, params, TimeConfig(0.01, 0.02, "picard"), exact.sources(params), exact.boundary())
    assert max(rep.picard_iterations) <= 10
    assert max(rep.nonlinear_residual) <= 1e-9


def test_picard_max_iter_failure(decay2, params):
    with pytest.raises(PicardError):
        step_picard(decay2, params, 0.05, tol=1e-14, max_iter=2)
    with pytest.raises(RunFailure) as info:
        run(decay2, params, TimeConfig(0.05, 0.1, "picard", picard_tol=1e-14, picard_max_iter=2))
    assert isinstance(info.value.cause, PicardError)


def test_no_steps(decay2, params):
    traj, rep = run(decay2, params, TimeConfig(0.1, 0.0))
    assert len(traj) == 1 and rep.energy == [energy(decay2, params)]


def test_time_grid_exact(decay2, params):
    traj, _ = run(decay2, params, TimeConfig(0.1, 0.3, "linearized"))
    assert all(st.t == n * 0.1 for n, st in enumerate(traj))


def test_config_validation():
    with pytest.raises(ValueError):
        TimeConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        TimeConfig(0.3, 1.0)
    with pytest.raises(ValueError):
        TimeConfig(0.1, 1.0, "crank")
    with pytest.raises(ValueError):
        ProblemParams(Re=0.0)
    with pytest.raises(ValueError):
        ProblemParams(mu_r=2.0)
    assert TimeConfig(1 / 32, 1.0).N == 32
    assert ProblemParams(s=2.0, Rm=4.0).alpha == 0.5


def test_state_vector_roundtrip(spaces2, rng):
    x = rng.standard_normal(spaces2.total)
    np.testing.assert_array_equal(State.from_vector(spaces2, 0.0, x).vector(), x)
