"""Error norms, time-accumulated norms, energy diagnostics and rate tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem_core import quadrature_rule
from .spaces import Field, cell_divergence, evaluate, physical_points

NORM_DEGREE = 6


def _weights(mesh, degree):
    q = quadrature_rule(degree)
    return q.points, np.abs(6.0 * mesh.cell_volumes())[:, None] * q.weights[None, :]


def _diff_sq(a, b, what, mesh, t, degree):
    """Squared L2 norm of quantity ``what`` of ``a - b`` (Fields, analytic ``f(t, x)`` or None)."""
    ref = a if isinstance(a, Field) else b
    if not isinstance(ref, Field):
        raise ValueError("at least one operand must be a Field")
    pts, wd = _weights(mesh, degree)
    shape = evaluate(ref, pts, what).shape

    def q(obj):
        if obj is None:
            return 0.0
        if isinstance(obj, Field):
            return evaluate(obj, pts, what)
        X = physical_points(mesh, pts).reshape(-1, 3)
        return np.asarray(obj(t, X), dtype=float).reshape(shape)

    d = np.asarray(q(a) - q(b))
    sq = d.reshape(shape[0], shape[1], -1) ** 2
    return float(np.sum(wd * sq.sum(axis=-1)))


def norm_L2(a, b=None, t: float = 0.0, degree: int = NORM_DEGREE) -> float:
    """``||a - b||`` where each operand is a Field, an analytic ``f(t, x)`` or None."""
    mesh = (a if isinstance(a, Field) else b).space.mesh
    return math.sqrt(_diff_sq(a, b, "values", mesh, t, degree))


def seminorm_H1(a, b=None, t: float = 0.0, degree: int = NORM_DEGREE) -> float:
    """``||grad(a - b)||``; analytic operands give the gradient ``[i, j] = d_j f_i``."""
    mesh = (a if isinstance(a, Field) else b).space.mesh
    return math.sqrt(_diff_sq(a, b, "grads", mesh, t, degree))


def norm_curl(a, b=None, t: float = 0.0, degree: int = NORM_DEGREE, curl_b=None) -> float:
    """``(||a - b||^2 + ||curl(a - b)||^2)^(1/2)``; analytic ``b`` needs ``curl_b``."""
    mesh = (a if isinstance(a, Field) else b).space.mesh
    cb = b if isinstance(b, Field) or b is None else curl_b
    return math.sqrt(_diff_sq(a, b, "values", mesh, t, degree)
                     + _diff_sq(a, cb, "curls", mesh, t, degree))


def curl_L2(a, b=None, t: float = 0.0, degree: int = NORM_DEGREE) -> float:
    mesh = (a if isinstance(a, Field) else b).space.mesh
    return math.sqrt(_diff_sq(a, b, "curls", mesh, t, degree))


def norm_div(a, b=None, t: float = 0.0, degree: int = NORM_DEGREE, div_b=None) -> float:
    mesh = (a if isinstance(a, Field) else b).space.mesh
    db = b if isinstance(b, Field) or b is None else div_b
    return math.sqrt(_diff_sq(a, b, "values", mesh, t, degree)
                     + _diff_sq(a, db, "divs", mesh, t, degree))


def vert_norm(values, k: float) -> float:
    """Discrete L2-in-time norm ``sqrt(k * sum(v_n^2))`` over steps n = 1..m."""
    values = list(values)
    if not values:
        raise ValueError("vert_norm needs at least one step")
    return math.sqrt(k * sum(float(v) ** 2 for v in values))


# --- energy ------------------------------------------------------------------

def current_density(E: Field, u: Field, B: Field, pts) -> np.ndarray:
    return evaluate(E, pts) + np.cross(evaluate(u, pts), evaluate(B, pts))


def current_norm_sq(E: Field, u: Field, B: Field, degree: int = NORM_DEGREE) -> float:
    pts, wd = _weights(E.space.mesh, degree)
    j = current_density(E, u, B, pts)
    return float(np.sum(wd * np.sum(j**2, axis=-1)))


def grad_norm_sq(u: Field) -> float:
    pts, wd = _weights(u.space.mesh, 2)
    g = evaluate(u, pts, "grads")
    return float(np.sum(wd * np.sum(g**2, axis=(-1, -2))))


def energy(state, params) -> float:
    """``||u||^2 + alpha ||B||^2``."""
    sp = state.spaces
    u, B = state.u.coefficients, state.B.coefficients
    return float(u @ (sp.matrix("Mu") @ u) + params.alpha * (B @ (sp.matrix("MB") @ B)))


@dataclass
class EnergyReport:
    energy: list[float]
    viscous: list[float]  # accumulated 2 Re^{-1} k sum |grad u|^2
    joule: list[float]  # accumulated 2 s k sum |j|^2
    margin: list[float]  # E0 - energy - viscous - joule
    monotone: bool


def energy_report(report) -> EnergyReport:
    """Terms of the discrete energy law from a RunReport."""
    p, k = report.params, report.k
    visc = list(np.cumsum([0.0] + [2.0 * k / p.Re * g for g in report.grad_u_sq[1:]]))
    joule = list(np.cumsum([0.0] + [2.0 * k * p.s * j for j in report.j_sq[1:]]))
    e = report.energy
    margin = [e[0] - (en + v + jj) for en, v, jj in zip(e, visc, joule)]
    tol = 1e-12 * max(1.0, e[0])
    mono = all(b <= a + tol for a, b in zip(e, e[1:]))
    return EnergyReport(list(e), [float(v) for v in visc], [float(v) for v in joule],
                        [float(m) for m in margin], mono)


def div_b_report(trajectory) -> tuple[list[float], list[float]]:
    """Per-step ``||div B_h||`` and ``max |div B_h|`` (exact for RT0)."""
    l2, mx = [], []
    for st in trajectory:
        d = cell_divergence(st.B)
        vol = st.B.space.mesh.cell_volumes()
        l2.append(float(math.sqrt(np.sum(d**2 * vol))))
        mx.append(float(np.abs(d).max()))
    return l2, mx


# --- starred errors ------------------------------------------------------------

@dataclass
class ErrorReport:
    u: float
    B: float
    E: float
    p: float
    h: float
    k: float
    scheme: str
    per_step: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"u": self.u, "B": self.B, "E": self.E, "p": self.p}


class _Shifted:
    """Exact pressure minus its computed mean, as an ``f(t, x)`` callable."""

    def __init__(self, exact, mesh):
        self.exact, self.mesh, self._means = exact, mesh, {}

    def __call__(self, t, x):
        if t not in self._means:
            self._means[t] = self.exact.pressure_mean(self.mesh, t)
        return self.exact.p(t, x) - self._means[t]


def starred_errors(trajectory, exact, k: float, scheme: str = "", degree: int = NORM_DEGREE) -> ErrorReport:
    """Starred error measures of a trajectory against an analytic solution.

    ``u*^2 = ||u^m - u_h^m||^2 + |||grad(u - u_h)|||^2``,
    ``B*^2 = ||B^m - B_h^m||^2``,
    ``E*^2 = |||E - E_h|||^2 + k |||curl(E - E_h)|||^2``,
    ``p*^2 = |||p - p_h|||^2`` with ``p`` shifted to zero mean.
    Time-accumulated norms run over steps 1..m.
    """
    steps = sorted(trajectory[1:], key=lambda s: s.t)
    final = steps[-1]
    mesh = final.spaces.mesh
    p_ex = _Shifted(exact, mesh)
    gu = [seminorm_H1(s.u, exact.grad_u, s.t, degree) for s in steps]
    eE = [norm_L2(s.E, exact.E, s.t, degree) for s in steps]
    cE = [curl_L2(s.E, exact.curl_E, s.t, degree) for s in steps]
    ep = [norm_L2(s.p, p_ex, s.t, degree) for s in steps]
    uL2 = norm_L2(final.u, exact.u, final.t, degree)
    BL2 = norm_L2(final.B, exact.B, final.t, degree)
    return _combine(uL2, BL2, gu, eE, cE, ep, k, mesh.h, scheme)


def starred_differences(trajectory, reference, k: float, scheme: str = "", degree: int = NORM_DEGREE) -> ErrorReport:
    """Starred measures of ``trajectory - reference`` on the same mesh.

    ``reference`` may use a finer time step; its states are matched to the
    trajectory's times.
    """
    ref_by_t = {round(s.t, 12): s for s in reference}
    steps = sorted(trajectory[1:], key=lambda s: s.t)
    try:
        refs = [ref_by_t[round(s.t, 12)] for s in steps]
    except KeyError as exc:
        raise ValueError(f"reference has no state at t={exc.args[0]}") from None
    gu = [seminorm_H1(s.u, r.u, degree=degree) for s, r in zip(steps, refs)]
    eE = [norm_L2(s.E, r.E, degree=degree) for s, r in zip(steps, refs)]
    cE = [curl_L2(s.E, r.E, degree=degree) for s, r in zip(steps, refs)]
    ep = [norm_L2(s.p, r.p, degree=degree) for s, r in zip(steps, refs)]
    uL2 = norm_L2(steps[-1].u, refs[-1].u, degree=degree)
    BL2 = norm_L2(steps[-1].B, refs[-1].B, degree=degree)
    return _combine(uL2, BL2, gu, eE, cE, ep, k, steps[-1].spaces.mesh.h, scheme)


def _combine(uL2, BL2, gu, eE, cE, ep, k, h, scheme) -> ErrorReport:
    u = math.sqrt(uL2**2 + vert_norm(gu, k) ** 2)
    E = math.sqrt(vert_norm(eE, k) ** 2 + k * vert_norm(cE, k) ** 2)
    return ErrorReport(u, BL2, E, vert_norm(ep, k), h, k, scheme,
                       {"u_L2_final": uL2, "grad_u": gu, "E": eE, "curl_E": cE, "p": ep})


# --- rates -------------------------------------------------------------------

@dataclass
class RateTable:
    """Errors per refinement level with observed orders between adjacent rows."""

    sizes: list[float]  # h or k, coarse to fine
    errors: dict[str, list[float]]
    rates: dict[str, list[float]] = field(default_factory=dict)
    slopes: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        order = np.argsort(self.sizes)[::-1]
        self.sizes = [self.sizes[i] for i in order]
        self.errors = {k: [v[i] for i in order] for k, v in self.errors.items()}
        self.rates = {k: observed_orders(self.sizes, v) for k, v in self.errors.items()}
        self.slopes = {k: ls_slope(self.sizes, v) for k, v in self.errors.items()}


def observed_orders(sizes, errors) -> list[float]:
    """``log(e_coarse / e_fine) / log(size_coarse / size_fine)`` per adjacent pair."""
    out = []
    for (h0, e0), (h1, e1) in zip(zip(sizes, errors), zip(sizes[1:], errors[1:])):
        if e0 > 0 and e1 > 0 and h0 != h1:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
        else:
            out.append(float("nan"))
    return out


def ls_slope(sizes, errors) -> float:
    pairs = [(math.log(h), math.log(e)) for h, e in zip(sizes, errors) if e > 0]
    if len(pairs) < 2:
        return float("nan")
    x, y = np.array(pairs).T
    return float(np.polyfit(x, y, 1)[0])
