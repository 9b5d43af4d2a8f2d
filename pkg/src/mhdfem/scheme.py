"""Backward-Euler time stepping for the incompressible MHD system.

Two schemes share one block layout ``[u | B | E | p | lambda]``:

* ``linearized``: a single solve per step with the convection advector and the
  magnetic field in the Lorentz/Ohm couplings lagged to the previous step;
* ``picard``: the fully implicit step, solved by fixed-point iteration that
  lags the advector and every coupling B to the previous iterate.

``lambda`` is the Lagrange multiplier enforcing a zero-mean pressure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .assembly import Spaces, assemble_step_system, dirichlet_values, step_rhs
from .errors import CheckFailure, PicardError, RunFailure
from .linalg import DEFAULT_TOL, LinearSolver, SolveStats, spmv
from .spaces import Field, cell_divergence, discrete_curl_matrix, interpolate

log = logging.getLogger(__name__)

SCHEMES = ("linearized", "picard")


@dataclass(frozen=True)
class ProblemParams:
    Re: float = 1.0
    Rm: float = 1.0
    s: float = 1.0
    mu_r: float = 1.0
    sigma_r: float = 1.0

    def __post_init__(self):
        if not (self.Re > 0 and self.Rm > 0 and self.s >= 0):
            raise ValueError(f"need Re > 0, Rm > 0, s >= 0; got {self}")
        if self.mu_r != 1.0 or self.sigma_r != 1.0:
            raise ValueError("only mu_r = sigma_r = 1 is supported")

    @property
    def alpha(self) -> float:
        return self.s / self.Rm


@dataclass(frozen=True)
class TimeConfig:
    k: float
    T: float
    scheme: str = "picard"
    picard_tol: float = 1e-10
    picard_max_iter: int = 50

    def __post_init__(self):
        if not self.k > 0 or self.T < 0:
            raise ValueError(f"need k > 0 and T >= 0, got k={self.k}, T={self.T}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        n = self.T / self.k
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T = {self.T} is not a whole number of steps of k = {self.k}")

    @property
    def N(self) -> int:
        return int(round(self.T / self.k))


@dataclass
class State:
    spaces: Spaces
    t: float
    u: Field
    B: Field
    E: Field
    p: Field
    lam: float = 0.0

    @classmethod
    def from_vector(cls, spaces: Spaces, t: float, x: np.ndarray) -> "State":
        u, B, E, p, lam = spaces.split(x)
        return cls(spaces, t, Field(spaces.u, u.copy()), Field(spaces.B, B.copy()),
                   Field(spaces.E, E.copy()), Field(spaces.p, p.copy()), float(lam[0]))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coefficients, self.B.coefficients, self.E.coefficients,
                               self.p.coefficients, [self.lam]])

    def current(self, B_ref: Field | None = None):
        """Evaluator of ``j = E + u x B_ref`` at reference points on all cells."""
        B_ref = self.B if B_ref is None else B_ref
        return lambda pts: analysis.current_density(self.E, self.u, B_ref, pts)


def zero_state(spaces: Spaces, t: float = 0.0) -> State:
    return State.from_vector(spaces, t, np.zeros(spaces.total))


def initial_state(spaces: Spaces, fields, t: float = 0.0) -> State:
    """Canonical interpolants of the given ``u, B, E, p`` callables ``f(t, x)``.

    The pressure is shifted to zero mean.
    """
    st = State(
        spaces, t,
        interpolate(spaces.u, fields.u, t),
        interpolate(spaces.B, fields.B, t),
        interpolate(spaces.E, fields.E, t),
        interpolate(spaces.p, fields.p, t),
    )
    m = spaces.pressure_mean_row()
    st.p.coefficients -= (m @ st.p.coefficients) / m.sum()
    return st


@dataclass
class StepInfo:
    picard_iterations: int
    solves: list[SolveStats]
    increments: list[float] = field(default_factory=list)
    nonlinear_residual: float = 0.0
    div_residual: float = 0.0
    faraday_residual: float = 0.0


def _post_checks(spaces: Spaces, prev: State, new: State, k: float, sources, params, info: StepInfo,
                 check: bool):
    o = spaces.offsets
    Bdiv = spaces.matrix("Bdiv")
    r_div = Bdiv @ new.u.coefficients + spaces.pressure_mean_row() * new.lam
    info.div_residual = float(np.abs(r_div).max())

    # weak Faraday rows: M_B (B - B_prev + k curl_h E) = k (g_B, C) on interior faces
    MB = spaces.matrix("MB")
    D = spaces._cache.get("D")
    if D is None:
        D = spaces._cache["D"] = discrete_curl_matrix(spaces.E, spaces.B)
    d = new.B.coefficients - prev.B.coefficients + k * (D @ new.E.coefficients)
    r = MB @ d
    if sources is not None and sources.g_B is not None:
        from .assembly import load_vector

        r = r - k * load_vector(spaces.B, sources.g_B, new.t)
    interior = spaces.B.interior_dofs()
    scale = max(1.0, float(np.abs(MB @ new.B.coefficients).max()))
    info.faraday_residual = float(np.abs(r[interior]).max() / scale) if len(interior) else 0.0
    if check:
        if info.div_residual > 1e-9:
            raise CheckFailure(f"divergence rows not satisfied: {info.div_residual:.3e}")
        if info.faraday_residual > 1e-10:
            raise CheckFailure(f"Faraday identity violated: {info.faraday_residual:.3e}")


def _solver(solver, solver_tol, method):
    return solver if solver is not None else LinearSolver(solver_tol, method)


def step_linearized(prev: State, params: ProblemParams, k: float, sources=None, boundary=None,
                    solver_tol: float = DEFAULT_TOL, method: str = "direct",
                    check: bool = True, solver: LinearSolver | None = None) -> tuple[State, StepInfo]:
    """One step of the linearised scheme (advector and coupling B lagged to ``prev``)."""
    spaces = prev.spaces
    solver = _solver(solver, solver_tol, method)
    t = prev.t + k
    system = assemble_step_system(prev, prev, params, k, sources, t, boundary)
    x, stats = solver.solve(system.matrix, system.rhs, prev.vector())
    new = State.from_vector(spaces, t, x)
    info = StepInfo(1, [stats])
    _post_checks(spaces, prev, new, k, sources, params, info, check)
    return new, info


def _norm(x):
    return float(np.linalg.norm(x))


def step_picard(prev: State, params: ProblemParams, k: float, sources=None, boundary=None,
                tol: float = 1e-10, max_iter: int = 50, solver_tol: float = DEFAULT_TOL,
                method: str = "direct", check: bool = True,
                solver: LinearSolver | None = None,
                guess: State | None = None) -> tuple[State, StepInfo]:
    """Fully implicit step by Picard iteration.

    Iterate l solves the linearised system with the advector and every
    coupling B taken from iterate l-1, starting from ``guess`` (default
    ``prev``; the start changes the iteration count, not the limit).  Converged
    when ``|du| + |dB| + |dE| <= tol (1 + |u| + |B| + |E|)`` in Euclidean
    coefficient norms.
    """
    spaces = prev.spaces
    solver = _solver(solver, solver_tol, method)
    t = prev.t + k
    rhs = step_rhs(spaces, prev, params, k, sources, t)
    bc = dirichlet_values(spaces, boundary, t)
    iterate = prev if guess is None else guess
    info = StepInfo(0, [])
    for it in range(1, max_iter + 1):
        system = assemble_step_system(prev, iterate, params, k, sources, t, boundary, rhs, bc)
        x, stats = solver.solve(system.matrix, system.rhs, iterate.vector())
        info.solves.append(stats)
        new = State.from_vector(spaces, t, x)
        inc = (_norm(new.u.coefficients - iterate.u.coefficients)
               + _norm(new.B.coefficients - iterate.B.coefficients)
               + _norm(new.E.coefficients - iterate.E.coefficients))
        size = 1.0 + _norm(new.u.coefficients) + _norm(new.B.coefficients) + _norm(new.E.coefficients)
        info.increments.append(inc / size)
        iterate = new
        if inc <= tol * size:
            break
    else:
        raise PicardError(f"Picard iteration did not converge in {max_iter} iterations "
                          f"(last relative increment {info.increments[-1]:.3e})", info.increments)
    info.picard_iterations = it

    # residual of the fully nonlinear equations at the converged state
    final = assemble_step_system(prev, iterate, params, k, sources, t, boundary, rhs, bc)
    r = final.rhs - spmv(final.matrix, iterate.vector())
    info.nonlinear_residual = _norm(r) / max(_norm(final.rhs), 1.0)
    _post_checks(spaces, prev, iterate, k, sources, params, info, check)
    return iterate, info


@dataclass
class RunReport:
    scheme: str
    h: float
    k: float
    params: ProblemParams
    notes: dict = field(default_factory=dict)
    times: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)  # |u|^2 + alpha |B|^2
    grad_u_sq: list[float] = field(default_factory=list)
    j_sq: list[float] = field(default_factory=list)
    energy_margin: list[float] = field(default_factory=list)
    divB_l2: list[float] = field(default_factory=list)
    divB_max: list[float] = field(default_factory=list)
    picard_iterations: list[int] = field(default_factory=list)
    picard_increments: list[list[float]] = field(default_factory=list)
    solve_residual_max: list[float] = field(default_factory=list)
    nonlinear_residual: list[float] = field(default_factory=list)
    div_residual: list[float] = field(default_factory=list)
    faraday_residual: list[float] = field(default_factory=list)
    errors: dict | None = None

    def as_dict(self) -> dict:
        from dataclasses import asdict

        d = asdict(self)
        d["params"]["alpha"] = self.params.alpha
        return d


def _record(report: RunReport, state: State, B_ref: Field, k: float):
    e = analysis.energy(state, report.params)
    report.times.append(state.t)
    report.energy.append(e)
    div = cell_divergence(state.B)
    vol = state.spaces.mesh.cell_volumes()
    report.divB_l2.append(float(math.sqrt(np.sum(div**2 * vol))))
    report.divB_max.append(float(np.abs(div).max()))
    if len(report.times) == 1:
        report.grad_u_sq.append(0.0)
        report.j_sq.append(0.0)
        report.energy_margin.append(0.0)
        return
    report.grad_u_sq.append(analysis.grad_norm_sq(state.u))
    report.j_sq.append(analysis.current_norm_sq(state.E, state.u, B_ref))
    p = report.params
    lhs = e + k * sum(2.0 / p.Re * g + 2.0 * p.s * j
                      for g, j in zip(report.grad_u_sq[1:], report.j_sq[1:]))
    report.energy_margin.append(report.energy[0] - lhs)


def run(initial: State, params: ProblemParams, time: TimeConfig, sources=None, boundary=None,
        solver_tol: float = DEFAULT_TOL, method: str = "direct", check: bool = True,
        notes: dict | None = None, progress=None) -> tuple[list[State], RunReport]:
    """March ``time.N`` steps from ``initial``; returns the trajectory and report.

    ``energy_margin[n]`` is ``E0 - (|u^n|^2 + alpha |B^n|^2 + 2 k sum(Re^{-1}
    |grad u|^2 + s |j|^2))``; it is nonnegative for the discrete energy law
    when there is no forcing.
    """
    report = RunReport(time.scheme, initial.spaces.mesh.h, time.k, params, dict(notes or {}))
    report.notes.setdefault("initial_data", "canonical interpolation of exact fields")
    report.notes.setdefault("pressure_mean", "zero mean via Lagrange multiplier")
    solver = LinearSolver(solver_tol, method)
    traj = [initial]
    _record(report, initial, initial.B, time.k)
    state = initial
    for n in range(1, time.N + 1):
        # linear extrapolation of the last two steps as the Picard start
        guess = None
        if len(traj) >= 2:
            guess = State.from_vector(initial.spaces, state.t + time.k,
                                      2.0 * state.vector() - traj[-2].vector())
        try:
            if time.scheme == "linearized":
                new, info = step_linearized(state, params, time.k, sources, boundary,
                                            solver_tol, method, check, solver)
                B_ref = state.B
            else:
                new, info = step_picard(state, params, time.k, sources, boundary,
                                        time.picard_tol, time.picard_max_iter, solver_tol,
                                        method, check, solver, guess)
                B_ref = new.B
        except Exception as exc:
            raise RunFailure(f"step {n} failed: {exc}", report, exc) from exc
        # keep the time grid exact: t_n = n k
        new.t = n * time.k
        report.picard_iterations.append(info.picard_iterations)
        report.picard_increments.append(info.increments)
        report.solve_residual_max.append(max(s.residual for s in info.solves))
        report.nonlinear_residual.append(info.nonlinear_residual)
        report.div_residual.append(info.div_residual)
        report.faraday_residual.append(info.faraday_residual)
        _record(report, new, B_ref, time.k)
        traj.append(new)
        state = new
        if progress is not None:
            progress(n, new, info)
        log.info("step %d/%d t=%.4g picard=%d", n, time.N, new.t, info.picard_iterations)
    return traj, report
