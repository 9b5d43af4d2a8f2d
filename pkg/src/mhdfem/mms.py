"""Manufactured solution for the convergence study and its source terms.

Exact fields on the unit cube::

    u = (e^t cos y, 0, 0)      E = (0, cos x, 0)
    B = (0, 0, e^t cos x)      p = -x cos y

The solution does not satisfy Faraday's law or the weak Ampere/Ohm relation,
so besides the momentum source ``f`` the solver receives an induction source
``g_B = B_t + curl E`` and an Ohm-row functional
``l3(F) = s (j, F) - alpha (B, curl F)``.  ``j`` is always ``E + u x B``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import assembly
from .spaces import FeSpace, physical_points


def _xyz(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


class ExactSolution:
    """Closed-form fields; every evaluator takes ``(t, x)`` with x of shape (..., 3)."""

    name = "mms"

    def u(self, t, x):
        X, Y, Z = _xyz(x)
        return np.stack([np.exp(t) * np.cos(Y), 0 * X, 0 * X], axis=-1)

    def u_t(self, t, x):
        return self.u(t, x)

    def grad_u(self, t, x):
        """(..., 3, 3) with entry [i, j] = d u_i / d x_j."""
        X, Y, Z = _xyz(x)
        g = np.zeros(X.shape + (3, 3))
        g[..., 0, 1] = -np.exp(t) * np.sin(Y)
        return g

    def B(self, t, x):
        X, Y, Z = _xyz(x)
        return np.stack([0 * X, 0 * X, np.exp(t) * np.cos(X)], axis=-1)

    def B_t(self, t, x):
        return self.B(t, x)

    def E(self, t, x):
        X, Y, Z = _xyz(x)
        return np.stack([0 * X, np.cos(X), 0 * X], axis=-1)

    def curl_E(self, t, x):
        X, Y, Z = _xyz(x)
        return np.stack([0 * X, 0 * X, -np.sin(X)], axis=-1)

    def p(self, t, x):
        X, Y, Z = _xyz(x)
        return -X * np.cos(Y)

    def j(self, t, x):
        return self.E(t, x) + np.cross(self.u(t, x), self.B(t, x))

    def eval(self, t, x):
        """``(u, B, E, p, j)`` at one time and position(s)."""
        return self.u(t, x), self.B(t, x), self.E(t, x), self.p(t, x), self.j(t, x)

    # ---- sources --------------------------------------------------------
    def momentum_source(self, t, x, params):
        """``u_t + (u . grad) u - Re^{-1} lap u - s j x B + grad p``."""
        X, Y, Z = _xyz(x)
        et = np.exp(t)
        fx = ((1.0 + 1.0 / params.Re) * et * np.cos(Y)
              - params.s * et * np.cos(X) ** 2 * (1.0 - np.exp(2 * t) * np.cos(Y))
              - np.cos(Y))
        return np.stack([fx, X * np.sin(Y), 0 * X], axis=-1)

    def induction_source(self, t, x):
        """``B_t + curl E``."""
        X, Y, Z = _xyz(x)
        return np.stack([0 * X, 0 * X, np.exp(t) * np.cos(X) - np.sin(X)], axis=-1)

    def ohm_source(self, space: FeSpace, t: float, params, degree: int = assembly.DEG_SOURCE):
        """``l3(F_i) = s (j, F_i) - alpha (B, curl F_i)`` for every N0 basis function."""
        jv = assembly.load_vector(space, self.j, t, degree)
        cv = assembly.curl_load_vector(space, self.B, t, degree)
        return params.s * jv - params.alpha * cv

    def sources(self, params) -> "SourceSet":
        return SourceSet(
            f=lambda t, x: self.momentum_source(t, x, params),
            g_B=self.induction_source,
            ohm=self.ohm_source,
        )

    def boundary(self) -> "BoundaryData":
        return BoundaryData(self.u, self.B, self.E)

    def pressure_mean(self, mesh, t: float, degree: int = 6) -> float:
        """Mean of p over the mesh domain, by quadrature."""
        from .fem_core import quadrature_rule

        q = quadrature_rule(degree)
        X = physical_points(mesh, q.points)
        wd = np.abs(6.0 * mesh.cell_volumes())[:, None] * q.weights
        return float(np.sum(wd * self.p(t, X)) / wd.sum())


@dataclass
class SourceSet:
    """Optional momentum source, induction source and Ohm-row functional."""

    f: Callable | None = None
    g_B: Callable | None = None
    ohm: Callable | None = None  # (N0 space, t, params) -> vector


@dataclass
class BoundaryData:
    u: Callable | None = None
    B: Callable | None = None
    E: Callable | None = None


def fd_residual(exact: ExactSolution, t: float, x: np.ndarray, params, h: float = 1e-5) -> dict:
    """Finite-difference residuals of the PDE system at points ``x``.

    Returns the momentum residual without the source (so it should equal
    ``f``) and the induction residual ``B_t + curl E`` (should equal
    ``g_B``), both from central differences of the closed-form fields.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eye = np.eye(3)

    def d(func, axis, order=1):
        e = h * eye[axis]
        if order == 1:
            return (func(t, x + e) - func(t, x - e)) / (2 * h)
        return (func(t, x + e) - 2 * func(t, x) + func(t, x - e)) / h**2

    u = exact.u(t, x)
    ut = (exact.u(t + h, x) - exact.u(t - h, x)) / (2 * h)
    grad_u = np.stack([d(exact.u, a) for a in range(3)], axis=-1)  # [..., i, a]
    conv = np.einsum("na,nia->ni", u, grad_u)
    lap = sum(d(exact.u, a, 2) for a in range(3))
    grad_p = np.stack([d(exact.p, a) for a in range(3)], axis=-1)
    jxb = np.cross(exact.j(t, x), exact.B(t, x))
    momentum = ut + conv - lap / params.Re - params.s * jxb + grad_p

    Bt = (exact.B(t + h, x) - exact.B(t - h, x)) / (2 * h)
    dE = [d(exact.E, a) for a in range(3)]
    curlE = np.stack([dE[1][:, 2] - dE[2][:, 1], dE[2][:, 0] - dE[0][:, 2],
                      dE[0][:, 1] - dE[1][:, 0]], axis=-1)
    divB = sum(d(exact.B, a)[:, a] for a in range(3))
    divu = sum(d(exact.u, a)[:, a] for a in range(3))
    return {"momentum": momentum, "induction": Bt + curlE, "div_u": divu, "div_B": divB}


class ZeroSolution(ExactSolution):
    """Identically zero fields (homogeneous data)."""

    name = "zero"

    def _z(self, t, x):
        return np.zeros(np.shape(x))

    u = u_t = B = B_t = E = curl_E = j = _z

    def grad_u(self, t, x):
        return np.zeros(np.shape(x) + (3,))

    def p(self, t, x):
        return np.zeros(np.shape(x)[:-1])

    def momentum_source(self, t, x, params):
        return np.zeros(np.shape(x))

    def induction_source(self, t, x):
        return np.zeros(np.shape(x))
