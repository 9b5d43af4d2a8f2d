"""Experiment drivers behind the command line: single runs, h- and k-sweeps,
the source-free energy test and the Gauss-law test, with CSV output.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .assembly import build_spaces
from .config import RunConfig
from .errors import CheckFailure
from .mesh import build_box_mesh
from .mms import ExactSolution
from .scheme import State, initial_state, run
from .spaces import Field, discrete_curl_matrix, edge_dofs, interpolate

log = logging.getLogger(__name__)

CSV_COLUMNS = ("refinement", "h", "k", "err_u_star", "err_B_star", "err_E_star", "err_p_star",
               "rate_u", "rate_B", "rate_E", "rate_p", "divB_max", "energy_margin",
               "picard_iters_max", "solve_residual_max")
GAUSS_TOL = 1e-11
ENERGY_REL_TOL = 1e-9


# --- source-free initial data ----------------------------------------------------

def decay_fields(extents=(1.0, 1.0, 1.0)):
    """Divergence-free ``u0 = curl(psi e_z)``, ``B0 = curl(phi e_z)`` vanishing on the box boundary.

    ``psi = sin^2(pi x) sin^2(pi y) sin(pi z)``, ``phi = sin(pi x) sin(pi y) sin(pi z)``
    in coordinates scaled to the unit cube.  Returns ``(u0, A)`` with ``A = phi e_z``
    the magnetic vector potential.
    """
    L = np.asarray(extents, dtype=float)

    def u0(x):
        X, Y, Z = (np.pi * x / L).T
        sx, sy, sz = np.sin(X), np.sin(Y), np.sin(Z)
        dpsi_dy = sx**2 * 2 * sy * np.cos(Y) * sz * np.pi / L[1]
        dpsi_dx = 2 * sx * np.cos(X) * sy**2 * sz * np.pi / L[0]
        return np.stack([dpsi_dy, -dpsi_dx, 0 * X], axis=-1)

    def A(x):
        X, Y, Z = (np.pi * x / L).T
        return np.stack([0 * X, 0 * X, np.sin(X) * np.sin(Y) * np.sin(Z)], axis=-1)

    return u0, A


def decay_state(spaces, extents=(1.0, 1.0, 1.0)) -> State:
    """Initial state of the source-free tests.

    ``B0`` is the discrete curl of the edge interpolant of ``A``, which equals
    the face interpolant of ``curl A`` and is exactly divergence-free cell by cell.
    """
    u0, A = decay_fields(extents)
    D = discrete_curl_matrix(spaces.E, spaces.B)
    B = Field(spaces.B, D @ edge_dofs(spaces.mesh, A))
    zero = Field(spaces.E, np.zeros(spaces.E.dof_count))
    return State(spaces, 0.0, interpolate(spaces.u, u0), B, zero,
                 Field(spaces.p, np.zeros(spaces.p.dof_count)))


# --- results ------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    kind: str
    rows: dict = field(default_factory=dict)  # scheme -> list of CSV row dicts
    reports: dict = field(default_factory=dict)  # scheme -> list of RunReport
    failures: list = field(default_factory=list)
    files: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


def _setup(cfg: RunConfig, n: int):
    mesh = build_box_mesh(n, n, n, cfg.extents)
    return build_spaces(mesh)


def _initial(cfg: RunConfig, spaces, exact):
    if cfg.problem == "mms":
        return initial_state(spaces, exact, 0.0)
    return decay_state(spaces, cfg.extents)


def _march(cfg: RunConfig, spaces, k: float, scheme: str, exact):
    tc = cfg.time_config(k, scheme)
    init = _initial(cfg, spaces, exact)
    if cfg.problem == "mms":
        src, bnd = exact.sources(cfg.params), exact.boundary()
    else:
        src, bnd = None, None
    t0 = time.perf_counter()
    traj, rep = run(init, cfg.params, tc, src, bnd, cfg.solver_tol, cfg.solver_method, cfg.check,
                    notes={"problem": cfg.problem})
    log.info("%s h=%.4g k=%.4g: %d steps in %.1f s", scheme, spaces.mesh.h, k, tc.N,
             time.perf_counter() - t0)
    return traj, rep


def _level_row(level, h, k, err, rep, rates=None):
    rates = rates or {}
    return {
        "refinement": level, "h": h, "k": k,
        "err_u_star": err.u if err else None, "err_B_star": err.B if err else None,
        "err_E_star": err.E if err else None, "err_p_star": err.p if err else None,
        "rate_u": rates.get("u"), "rate_B": rates.get("B"), "rate_E": rates.get("E"),
        "rate_p": rates.get("p"),
        "divB_max": max(rep.divB_max),
        "energy_margin": None,
        "picard_iters_max": max(rep.picard_iterations),
        "solve_residual_max": max(rep.solve_residual_max),
    }


def _add_rates(rows, sizes):
    errs = {q: [r[f"err_{q}_star"] for r in rows] for q in "uBEp"}
    table = analysis.RateTable(list(sizes), errs)
    # RateTable sorts coarse to fine; rows are already in that order
    for i, r in enumerate(rows):
        for q in "uBEp":
            r[f"rate_{q}"] = table.rates[q][i - 1] if i > 0 else None
    return table


def _check_rates(res, scheme, rows, quantities, min_rate, what):
    if min_rate is None or len(rows) < 2:
        return
    for q in quantities:
        r = rows[-1][f"rate_{q}"]
        if not (r is not None and r >= min_rate):
            res.failures.append(f"{scheme} {what}: observed order in {q} between the two finest "
                                f"levels is {r:.3f} < {min_rate}")


def h_sweep(cfg: RunConfig, res: ExperimentResult, scheme: str):
    exact = ExactSolution()
    rows, reps = [], []
    k = cfg.k[0]
    for level, n in enumerate(cfg.divisions):
        spaces = _setup(cfg, n)
        traj, rep = _march(cfg, spaces, k, scheme, exact)
        err = analysis.starred_errors(traj, exact, k, scheme)
        rep.errors = err.as_dict()
        rows.append(_level_row(level, spaces.mesh.h, k, err, rep))
        reps.append(rep)
    _add_rates(rows, [r["h"] for r in rows])
    _check_rates(res, scheme, rows, "uBEp", cfg.min_rate, "h-sweep")
    return rows, reps


def k_sweep(cfg: RunConfig, res: ExperimentResult, scheme: str):
    """Temporal sweep on one mesh.

    With ``reference_k`` set, the starred measures are differences to a
    reference run with that step on the same mesh, which removes the
    spatial error floor; otherwise they are errors against the exact
    solution.
    """
    exact = ExactSolution()
    spaces = _setup(cfg, cfg.divisions[0])
    reference = None
    if cfg.reference_k is not None:
        reference, _ = _march(cfg, spaces, cfg.reference_k, scheme, exact)
    rows, reps = [], []
    for level, k in enumerate(cfg.k):
        traj, rep = _march(cfg, spaces, k, scheme, exact)
        if reference is None:
            err = analysis.starred_errors(traj, exact, k, scheme)
        else:
            err = analysis.starred_differences(traj, reference, k, scheme)
        rep.errors = err.as_dict()
        rows.append(_level_row(level, spaces.mesh.h, k, err, rep))
        reps.append(rep)
    _add_rates(rows, [r["k"] for r in rows])
    _check_rates(res, scheme, rows, "uBE", cfg.min_rate, "k-sweep")
    return rows, reps


def _step_rows(rep, h):
    rows = []
    for n in range(len(rep.times)):
        rows.append({
            "refinement": n, "h": h, "k": rep.k,
            "err_u_star": None, "err_B_star": None, "err_E_star": None, "err_p_star": None,
            "rate_u": None, "rate_B": None, "rate_E": None, "rate_p": None,
            "divB_max": rep.divB_max[n], "energy_margin": rep.energy_margin[n],
            "picard_iters_max": rep.picard_iterations[n - 1] if n else None,
            "solve_residual_max": rep.solve_residual_max[n - 1] if n else None,
        })
    return rows


def energy_test(cfg: RunConfig, res: ExperimentResult, scheme: str):
    spaces = _setup(cfg, cfg.divisions[0])
    _, rep = _march(cfg, spaces, cfg.k[0], scheme, None)
    e = rep.energy
    floor = -ENERGY_REL_TOL * e[0]
    for n, m in enumerate(rep.energy_margin):
        if m < floor:
            res.failures.append(f"{scheme} energy: step {n} margin {m:.3e} < {floor:.3e}")
    for n in range(1, len(e)):
        if e[n] > e[n - 1]:
            res.failures.append(f"{scheme} energy: increased at step {n} "
                                f"({e[n - 1]:.15e} -> {e[n]:.15e})")
    return _step_rows(rep, spaces.mesh.h), [rep]


def gauss_test(cfg: RunConfig, res: ExperimentResult, scheme: str):
    spaces = _setup(cfg, cfg.divisions[0])
    _, rep = _march(cfg, spaces, cfg.k[0], scheme, None)
    d0 = rep.divB_max[0]
    for n, d in enumerate(rep.divB_max):
        if d > GAUSS_TOL or abs(d - d0) > GAUSS_TOL:
            res.failures.append(f"{scheme} gauss: step {n} max|div B| = {d:.3e} (step 0: {d0:.3e})")
    return _step_rows(rep, spaces.mesh.h), [rep]


def single_run(cfg: RunConfig, res: ExperimentResult, scheme: str):
    exact = ExactSolution()
    spaces = _setup(cfg, cfg.divisions[0])
    traj, rep = _march(cfg, spaces, cfg.k[0], scheme, exact)
    err = None
    if cfg.problem == "mms":
        err = analysis.starred_errors(traj, exact, cfg.k[0], scheme)
        rep.errors = err.as_dict()
    row = _level_row(0, spaces.mesh.h, cfg.k[0], err, rep)
    if cfg.problem == "decay":
        row["energy_margin"] = min(rep.energy_margin)
    return [row], [rep]


DRIVERS = {"single": single_run, "h-sweep": h_sweep, "k-sweep": k_sweep,
           "energy": energy_test, "gauss": gauss_test}


# --- output ------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.12e}"


def write_csv(path, rows, header: str | None = None):
    """CSV with a leading ``#`` timestamp line, then the fixed column set."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = header or f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(stamp + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list[dict]:
    """Rows of a file written by :func:`write_csv`, values as floats (None when blank)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        out.append({k: (float(v) if v != "" else None) for k, v in r.items()})
    return out


def _paths(output, schemes):
    if output is None:
        return {s: None for s in schemes}
    p = Path(output)
    if len(schemes) == 1:
        return {schemes[0]: p}
    return {s: p.with_name(f"{p.stem}_{s}{p.suffix or '.csv'}") for s in schemes}


def run_experiment(cfg: RunConfig, raise_on_failure: bool = True) -> ExperimentResult:
    """Run the configured experiment for every requested scheme and write CSVs.

    Raises
    ------
    CheckFailure
        After all output is written, when any experiment assertion failed
        (and ``raise_on_failure``).
    """
    t0 = time.perf_counter()
    res = ExperimentResult(cfg.kind)
    paths = _paths(cfg.output, cfg.schemes)
    for scheme in cfg.schemes:
        rows, reps = DRIVERS[cfg.kind](cfg, res, scheme)
        res.rows[scheme], res.reports[scheme] = rows, reps
        if paths[scheme] is not None:
            res.files.append(write_csv(paths[scheme], rows))
            if cfg.kind == "single":
                js = paths[scheme].with_suffix(".json")
                js.write_text(json.dumps(reps[0].as_dict(), indent=1, default=float) + "\n")
                res.files.append(js)
    res.seconds = time.perf_counter() - t0
    if res.failures and raise_on_failure:
        raise CheckFailure("; ".join(res.failures))
    return res


def format_rows(rows) -> str:
    """Fixed-width text table of the main columns."""
    cols = ("refinement", "h", "k", "err_u_star", "err_B_star", "err_E_star", "err_p_star",
            "rate_u", "rate_B", "rate_E", "rate_p", "divB_max", "energy_margin", "picard_iters_max")
    out = ["  ".join(f"{c:>12}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if v is None:
                cells.append(f"{'-':>12}")
            elif isinstance(v, (int, np.integer)):
                cells.append(f"{int(v):>12d}")
            else:
                cells.append(f"{float(v):>12.4e}")
        out.append("  ".join(cells))
    return "\n".join(out)
