"""Run configuration: a small ``key = value`` format with sections.

Example::

    [experiment]
    kind = h-sweep          # single | h-sweep | k-sweep | energy | gauss
    output = hsweep.csv

    [mesh]
    divisions = 2, 4, 8

    [time]
    k = 0.01
    T = 0.08

Values may be comma-separated lists where noted and fractions such as
``1/128``.  ``#`` and ``;`` start comments.  Unknown sections or keys are
errors; every error message carries the line number.  Keys left out take
per-experiment defaults (see :data:`KIND_DEFAULTS`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError
from .linalg import METHODS
from .scheme import SCHEMES, ProblemParams, TimeConfig

KINDS = ("single", "h-sweep", "k-sweep", "energy", "gauss")
PROBLEMS = ("mms", "decay")

# section -> key -> (parser name, is list)
SCHEMA = {
    "mesh": {"divisions": ("int", True), "extents": ("float", True)},
    "params": {"Re": ("float", False), "Rm": ("float", False), "s": ("float", False)},
    "time": {"k": ("float", True), "T": ("float", False), "steps": ("int", False)},
    "scheme": {"scheme": ("str", True), "picard_tol": ("float", False),
               "picard_max_iter": ("int", False)},
    "solver": {"method": ("str", False), "tol": ("float", False)},
    "experiment": {"kind": ("str", False), "output": ("str", False), "problem": ("str", False),
                   "reference_k": ("str", False), "min_rate": ("float", False),
                   "check": ("bool", False)},
}

KIND_DEFAULTS = {
    "single": {"divisions": (4,), "k": (0.01,), "T": 0.08, "scheme": ("picard",), "problem": "mms"},
    "h-sweep": {"divisions": (2, 4, 8), "k": (0.01,), "T": 0.08, "scheme": ("picard",),
                "problem": "mms"},
    "k-sweep": {"divisions": (8,), "k": (1 / 4, 1 / 8, 1 / 16, 1 / 32), "T": 1.0,
                "scheme": ("picard",), "problem": "mms", "reference_k": 1 / 128},
    "energy": {"divisions": (4,), "k": (0.02,), "steps": 20, "scheme": ("linearized", "picard"),
               "problem": "decay"},
    "gauss": {"divisions": (4,), "k": (0.02,), "steps": 20, "scheme": ("linearized", "picard"),
              "problem": "decay"},
}


@dataclass(frozen=True)
class RunConfig:
    kind: str = "single"
    divisions: tuple[int, ...] = (4,)
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)
    Re: float = 1.0
    Rm: float = 1.0
    s: float = 1.0
    k: tuple[float, ...] = (0.01,)
    T: float = 0.08
    schemes: tuple[str, ...] = ("picard",)
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    solver_method: str = "direct"
    solver_tol: float = 1e-10
    problem: str = "mms"
    output: str | None = None
    reference_k: float | None = None
    min_rate: float | None = None
    check: bool = True
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.Re, self.Rm, self.s)

    def time_config(self, k: float, scheme: str) -> TimeConfig:
        return TimeConfig(k, self.T, scheme, self.picard_tol, self.picard_max_iter)


def _fail(line: int | None, msg: str):
    raise ConfigError(f"line {line}: {msg}" if line else msg)


def _scalar(kind: str, text: str, line: int, key: str):
    text = text.strip()
    try:
        if kind == "int":
            v = int(text)
        elif kind == "float":
            v = float(Fraction(text)) if "/" in text else float(text)
        elif kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            v = low in ("true", "yes", "1")
        else:
            if not text:
                raise ValueError
            v = text
    except (ValueError, ZeroDivisionError):
        _fail(line, f"{key} = {text!r} is not a valid {kind}")
    if kind == "float" and not math.isfinite(v):
        _fail(line, f"{key} must be finite, got {text!r}")
    return v


def _tokenize(text: str) -> dict[str, tuple[str, int]]:
    """``{key: (raw value, line)}`` with section membership validated."""
    section = None
    seen: dict[str, tuple[str, int]] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                _fail(n, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                _fail(n, f"unknown section [{section}]; expected one of "
                         f"{', '.join('[' + s + ']' for s in SCHEMA)}")
            continue
        if "=" not in line:
            _fail(n, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            _fail(n, f"key {key!r} appears before any [section]")
        if key not in SCHEMA[section]:
            _fail(n, f"unknown key {key!r} in [{section}]; allowed: {', '.join(SCHEMA[section])}")
        if key in seen:
            _fail(n, f"duplicate key {key!r} (first set on line {seen[key][1]})")
        seen[key] = (value, n)
    return seen


def parse_config(text: str, kind: str | None = None) -> RunConfig:
    """Parse and validate a configuration.

    ``kind`` (from the CLI verb) supplies the experiment kind when the file
    does not; a conflicting ``kind`` in the file is an error.
    """
    raw = _tokenize(text)
    section_of = {k: s for s, keys in SCHEMA.items() for k in keys}
    vals, lines = {}, {}
    for key, (value, n) in raw.items():
        typ, is_list = SCHEMA[section_of[key]][key]
        if key == "reference_k":
            vals[key] = None if value.strip().lower() == "none" else _scalar("float", value, n, key)
        elif is_list:
            parts = [p for p in value.split(",")]
            if any(not p.strip() for p in parts):
                _fail(n, f"{key} has an empty list entry")
            vals[key] = tuple(_scalar(typ, p, n, key) for p in parts)
        else:
            vals[key] = _scalar(typ, value, n, key)
        lines[key] = n

    file_kind = vals.get("kind")
    if file_kind is not None and file_kind not in KINDS:
        _fail(lines["kind"], f"kind = {file_kind!r}; allowed values: {', '.join(KINDS)}")
    if kind is not None and file_kind is not None and kind != file_kind:
        _fail(lines["kind"], f"file asks for kind {file_kind!r} but the command runs {kind!r}")
    kind = file_kind or kind or "single"
    for key, dv in KIND_DEFAULTS[kind].items():
        vals.setdefault(key, dv)
    line = lines.get

    # individual values
    for d in vals["divisions"]:
        if d < 1:
            _fail(line("divisions"), f"divisions must be positive integers, got {d}")
    extents = vals.get("extents", (1.0, 1.0, 1.0))
    if len(extents) != 3 or min(extents) <= 0:
        _fail(line("extents"), f"extents must be three positive lengths, got {extents}")
    for key in ("Re", "Rm"):
        if key in vals and not vals[key] > 0:
            _fail(line(key), f"{key} must be positive, got {vals[key]}")
    if "s" in vals and vals["s"] < 0:
        _fail(line("s"), f"s must be non-negative, got {vals['s']}")
    for kv in vals["k"]:
        if not kv > 0:
            _fail(line("k"), f"time step k must be positive, got {kv}")
    for sch in vals["scheme"]:
        if sch not in SCHEMES:
            _fail(line("scheme"), f"scheme = {sch!r}; allowed values: {', '.join(SCHEMES)}")
    if len(set(vals["scheme"])) != len(vals["scheme"]):
        _fail(line("scheme"), "scheme list has duplicates")
    method = vals.get("method", "direct")
    if method not in METHODS:
        _fail(line("method"), f"method = {method!r}; allowed values: {', '.join(METHODS)}")
    for key in ("tol", "picard_tol"):
        if key in vals and not 0 < vals[key] < 1:
            _fail(line(key), f"{key} must lie in (0, 1), got {vals[key]}")
    if "picard_max_iter" in vals and vals["picard_max_iter"] < 1:
        _fail(line("picard_max_iter"), "picard_max_iter must be at least 1")
    problem = vals["problem"]
    if problem not in PROBLEMS:
        _fail(line("problem"), f"problem = {problem!r}; allowed values: {', '.join(PROBLEMS)}")

    # final time: T or a step count (needs a single k)
    if "T" in vals and "steps" in vals and "T" in lines and "steps" in lines:
        _fail(line("steps"), "give either T or steps, not both")
    if "steps" in vals and "T" not in lines:
        if vals["steps"] < 1:
            _fail(line("steps"), f"steps must be at least 1, got {vals['steps']}")
        if len(vals["k"]) != 1:
            _fail(line("steps"), "steps needs a single time step k; use T for several")
        T = vals["steps"] * vals["k"][0]
    else:
        T = vals["T"]
    if not T > 0:
        _fail(line("T"), f"final time T must be positive, got {T}")
    for kv in vals["k"]:
        n = T / kv
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            _fail(line("k") or line("T"), f"T = {T} is not a whole number of steps of k = {kv}")

    # shape per experiment kind
    ndiv, nk, nsch = len(vals["divisions"]), len(vals["k"]), len(vals["scheme"])
    if kind == "single" and (ndiv, nk, nsch) != (1, 1, 1):
        _fail(line("divisions") or line("k") or line("scheme"),
              "a single run needs exactly one division, one k and one scheme")
    if kind == "h-sweep":
        if ndiv < 2 or nk != 1:
            _fail(line("divisions") or line("k"), "h-sweep needs at least two divisions and one k")
        if list(vals["divisions"]) != sorted(set(vals["divisions"])):
            _fail(line("divisions"), "h-sweep divisions must be strictly increasing")
    if kind == "k-sweep":
        if nk < 2 or ndiv != 1:
            _fail(line("k") or line("divisions"), "k-sweep needs at least two k values and one division")
        if list(vals["k"]) != sorted(set(vals["k"]), reverse=True):
            _fail(line("k"), "k-sweep values must be strictly decreasing")
    if kind in ("energy", "gauss") and ndiv != 1:
        _fail(line("divisions"), f"{kind} needs a single division")
    if kind in ("energy", "gauss") and nk != 1:
        _fail(line("k"), f"{kind} needs a single time step")
    if kind in ("energy", "gauss") and problem != "decay":
        _fail(line("problem"), f"{kind} runs without sources; use problem = decay")
    if kind in ("h-sweep", "k-sweep") and problem != "mms":
        _fail(line("problem"), "convergence sweeps need the manufactured solution (problem = mms)")
    ref = vals.get("reference_k") if kind == "k-sweep" else None
    if "reference_k" in lines and kind != "k-sweep":
        _fail(line("reference_k"), "reference_k only applies to k-sweep")
    if ref is not None:
        if not 0 < ref < min(vals["k"]):
            _fail(line("reference_k"), f"reference_k must be positive and below every k, got {ref}")
        n = T / ref
        if abs(n - round(n)) > 1e-9 * n:
            _fail(line("reference_k"), f"T = {T} is not a whole number of steps of reference_k = {ref}")
        for kv in vals["k"]:
            r = kv / ref
            if abs(r - round(r)) > 1e-9 * r:
                _fail(line("reference_k"), f"k = {kv} is not a multiple of reference_k = {ref}")

    return RunConfig(
        kind=kind, divisions=tuple(vals["divisions"]), extents=tuple(float(e) for e in extents),
        Re=vals.get("Re", 1.0), Rm=vals.get("Rm", 1.0), s=vals.get("s", 1.0),
        k=tuple(vals["k"]), T=float(T), schemes=tuple(vals["scheme"]),
        picard_tol=vals.get("picard_tol", 1e-10), picard_max_iter=vals.get("picard_max_iter", 50),
        solver_method=method, solver_tol=vals.get("tol", 1e-10), problem=problem,
        output=vals.get("output"), reference_k=ref, min_rate=vals.get("min_rate"),
        check=vals.get("check", True), lines=lines,
    )


def load_config(path, kind: str | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not UTF-8: {exc}") from exc
    return parse_config(text, kind)
