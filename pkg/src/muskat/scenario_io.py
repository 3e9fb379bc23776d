"""Scenario files, data validation, and CSV/report writers.

Scenario grammar (version 1)::

    # muskat-scenario v1
    # comment lines start with '#'
    key = value

One key per line.  Expression keys accept arithmetic over ``t, x, y``
(see :mod:`muskat.expressions`); numeric keys accept constant expressions;
pair keys take two comma-separated numbers.  Unknown and duplicate keys are
errors.  ``format_scenario`` prints every key, defaults included, and
``parse_scenario(format_scenario(s)) == s``.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .diagnostics import PhaseSpec
from .errors import DataError, OutputError, ScenarioError
from .expressions import Expr, compile_expr
from .fields import BoundaryData, Bounds, DragModel, MixtureState, default_tau_comp, sample, sample_boundary_velocity
from .grid import StaggeredGrid, build_grid, sample_normal_velocity

HEADER = "# muskat-scenario v1"
REPORT_HEADER = "muskat-report v1"
CHOICES = {
    "mode": ("march", "picard"),
    "viscosity_average": ("arithmetic", "harmonic"),
    "velocity_solver": ("direct", "pcg"),
}
REQUIRED = ("extent", "nx", "ny", "T", "rho0", "nu0", "rho_bounds", "nu_bounds")
AUTO = "auto"
NONE = "none"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario.  ``None`` tolerances mean "derive from the data"."""

    extent: tuple
    nx: int
    ny: int
    T: float
    rho0: Expr
    nu0: Expr
    rho_bounds: tuple
    nu_bounds: tuple
    name: str = "scenario"
    origin: tuple = (0.0, 0.0)
    cfl: float = 0.5
    dt_max: Optional[float] = None
    rho_b: Optional[Expr] = None
    nu_b: Optional[Expr] = None
    bx: Expr = field(default_factory=lambda: compile_expr("0"))
    by: Expr = field(default_factory=lambda: compile_expr("0"))
    gx: Expr = field(default_factory=lambda: compile_expr("0"))
    gy: Expr = field(default_factory=lambda: compile_expr("0"))
    h0: Expr = field(default_factory=lambda: compile_expr("1"))
    m: float = 1.0
    q: float = 2.0
    s: float = 2.0
    phase1_rho: Optional[tuple] = None
    phase1_nu: Optional[tuple] = None
    phase2_rho: Optional[tuple] = None
    phase2_nu: Optional[tuple] = None
    tau_solve: float = 1e-9
    tau_div: float = 1e-8
    tau_comp: Optional[float] = None
    tau_mp: Optional[float] = None
    tau_n: Optional[float] = None
    tol_P: Optional[float] = None
    max_iter: int = 50
    theta: float = 1.0
    cadence: int = 10
    mode: str = "march"
    seed: int = 0
    viscosity_average: str = "arithmetic"
    velocity_solver: str = "direct"

    def __post_init__(self):
        # in-flux data default to the initial expressions
        if self.rho_b is None:
            object.__setattr__(self, "rho_b", self.rho0)
        if self.nu_b is None:
            object.__setattr__(self, "nu_b", self.nu0)

    # -- derived objects
    def build_grid(self) -> StaggeredGrid:
        return build_grid(self.origin, self.extent, self.nx, self.ny)

    @property
    def bounds(self) -> Bounds:
        return Bounds(self.rho_bounds[0], self.rho_bounds[1], self.nu_bounds[0], self.nu_bounds[1])

    @property
    def resolved_tau_mp(self) -> float:
        """Bound slack: the divergence residual may shift values by dt * tau_div * |f| per step."""
        if self.tau_mp is not None:
            return self.tau_mp
        return max(1e-12, self.T * self.tau_div * max(self.rho_bounds[1], self.nu_bounds[1]))

    @property
    def phases(self) -> Optional[PhaseSpec]:
        parts = (self.phase1_rho, self.phase1_nu, self.phase2_rho, self.phase2_nu)
        if all(p is None for p in parts):
            return None
        return PhaseSpec(*parts)

    @property
    def steady_boundary(self) -> bool:
        return not (self.bx.depends_on_t or self.by.depends_on_t)

    def b(self, t, x, y):
        return self.bx(t, x, y), self.by(t, x, y)

    def g(self, t, x, y):
        return self.gx(t, x, y), self.gy(t, x, y)

    def boundary_data(self) -> BoundaryData:
        return BoundaryData(self.b, self.rho_b, self.nu_b, self.g)

    def drag_model(self) -> DragModel:
        return DragModel(self.h0, self.m)

    def initial_state(self, grid: Optional[StaggeredGrid] = None) -> MixtureState:
        grid = grid or self.build_grid()
        x, y = grid.cell_coords()
        return MixtureState(sample(self.rho0, 0.0, x, y), sample(self.nu0, 0.0, x, y), self.bounds)

    def refined(self, nx: int, ny: Optional[int] = None) -> "Scenario":
        return replace(self, nx=nx, ny=nx if ny is None else ny)


_KINDS = {
    "name": "str", "origin": "pair", "extent": "pair", "nx": "int", "ny": "int", "T": "float",
    "cfl": "float", "dt_max": "auto", "rho0": "expr", "nu0": "expr", "rho_b": "expr", "nu_b": "expr",
    "bx": "expr", "by": "expr", "gx": "expr", "gy": "expr", "h0": "expr", "m": "float", "q": "float",
    "s": "float", "rho_bounds": "pair", "nu_bounds": "pair", "phase1_rho": "optpair", "phase1_nu": "optpair",
    "phase2_rho": "optpair", "phase2_nu": "optpair", "tau_solve": "float", "tau_div": "float",
    "tau_comp": "auto", "tau_mp": "auto", "tau_n": "auto", "tol_P": "auto", "max_iter": "int",
    "theta": "float", "cadence": "int", "mode": "choice", "seed": "int", "viscosity_average": "choice",
    "velocity_solver": "choice",
}
KEYS = tuple(f.name for f in fields(Scenario))
assert set(KEYS) == set(_KINDS)


def _number(text: str, line: int, col: int, key: str) -> float:
    expr = compile_expr(text, line=line, col_offset=col - 1, key=key)
    if not expr.is_constant or "t" in expr.names:
        raise ScenarioError(f"{key} must be a constant", line, col, key)
    val = float(np.asarray(expr(0.0, 0.0, 0.0)))
    if not np.isfinite(val):
        raise ScenarioError(f"{key} is not finite", line, col, key)
    return val


def _parse_value(key: str, text: str, line: int, col: int):
    kind = _KINDS[key]
    if kind == "str":
        if not text or any(c.isspace() for c in text):
            raise ScenarioError(f"{key} must be a single word", line, col, key)
        return text
    if kind == "choice":
        if text not in CHOICES[key]:
            raise ScenarioError(f"{key} must be one of {', '.join(CHOICES[key])}, got {text!r}", line, col, key)
        return text
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ScenarioError(f"{key} must be an integer, got {text!r}", line, col, key) from None
    if kind == "float":
        return _number(text, line, col, key)
    if kind == "auto":
        return None if text == AUTO else _number(text, line, col, key)
    if kind == "expr":
        return compile_expr(text, line=line, col_offset=col - 1, key=key)
    if kind == "optpair" and text == NONE:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ScenarioError(f"{key} needs two comma-separated values", line, col, key)
    first = _number(parts[0], line, col, key)
    second = _number(parts[1], line, col + len(parts[0]) + 1, key)
    return (first, second)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text; errors carry 1-based line and column."""
    lines = text.splitlines()
    first = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if first is None or lines[first].strip() != HEADER:
        raise ScenarioError(f"missing header line {HEADER!r}", (first or 0) + 1, 1)
    values: dict = {}
    for lineno, raw in enumerate(lines[first + 1:], start=first + 2):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in raw:
            raise ScenarioError("expected 'key = value'", lineno, len(raw) - len(raw.lstrip()) + 1)
        eq = raw.index("=")
        key = raw[:eq].strip()
        kcol = len(raw) - len(raw.lstrip()) + 1
        if key not in _KINDS:
            raise ScenarioError(f"unknown key {key!r}", lineno, kcol, key)
        if key in values:
            raise ScenarioError(f"duplicate key {key!r}", lineno, kcol, key)
        rest = raw[eq + 1:]
        vcol = eq + 2 + (len(rest) - len(rest.lstrip()))
        vtext = rest.strip()
        if not vtext:
            raise ScenarioError(f"empty value for {key!r}", lineno, vcol, key)
        values[key] = _parse_value(key, vtext, lineno, vcol)
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ScenarioError(f"missing required key {missing[0]!r}", key=missing[0])
    for k in ("nx", "ny", "cadence", "max_iter"):
        if k in values and values[k] < 1:
            raise ScenarioError(f"{k} must be >= 1", key=k)
    if values["T"] < 0:
        raise ScenarioError("T must be >= 0", key="T")
    if "cfl" in values and not 0 < values["cfl"] <= 1:
        raise ScenarioError("cfl must lie in (0, 1]", key="cfl")
    if "theta" in values and not 0 < values["theta"] <= 1:
        raise ScenarioError("theta must lie in (0, 1]", key="theta")
    return Scenario(**values)


def format_scenario(sc: Scenario) -> str:
    """Canonical text of a scenario, every key present."""
    out = [HEADER]
    for key in KEYS:
        val = getattr(sc, key)
        kind = _KINDS[key]
        if val is None:
            txt = AUTO if kind == "auto" else NONE
        elif kind == "expr":
            txt = val.source
        elif kind in ("pair", "optpair"):
            txt = f"{_fmt(val[0])}, {_fmt(val[1])}"
        elif kind in ("float", "auto"):
            txt = _fmt(val)
        else:
            txt = str(val)
        out.append(f"{key} = {txt}")
    return "\n".join(out) + "\n"


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OutputError(path, exc) from exc
    return parse_scenario(text)


def preset_names() -> list[str]:
    root = resources.files("muskat") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def load_preset(name: str) -> Scenario:
    res = resources.files("muskat") / "presets" / f"{name}.scn"
    if not res.is_file():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_scenario(res.read_text())


def resolve_scenario(arg: str) -> Scenario:
    """A path to a scenario file, or ``preset:<name>``."""
    if arg.startswith("preset:"):
        return load_preset(arg.split(":", 1)[1])
    return load_scenario(arg)


# ---------------------------------------------------------- validation

@dataclass(frozen=True)
class Issue:
    label: str
    message: str
    magnitude: float = 0.0
    locations: tuple = ()


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)
    sample_times: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def labels(self) -> list[str]:
        return sorted({i.label for i in self.issues})


def validation_times(sc: Scenario, n: int = 11) -> np.ndarray:
    """t = 0 plus uniform sample times over [0, T] when any datum depends on t."""
    exprs = (sc.rho0, sc.nu0, sc.rho_b, sc.nu_b, sc.bx, sc.by, sc.h0)
    if sc.T == 0 or not any(e.depends_on_t for e in exprs):
        return np.array([0.0])
    return np.linspace(0.0, sc.T, n)


def _range_issue(label, what, values, lo, hi, tol, where) -> Optional[Issue]:
    bad = np.nonzero((values < lo - tol) | (values > hi + tol))[0]
    if not bad.size:
        return None
    excess = float(np.max(np.maximum(lo - values[bad], values[bad] - hi)))
    locs = tuple(int(where[k]) for k in bad[:50])
    return Issue(label, f"{what} outside [{_fmt(lo)}, {_fmt(hi)}] at {bad.size} sample(s)", excess, locs)


def validate(sc: Scenario, grid: Optional[StaggeredGrid] = None) -> ValidationReport:
    """Sample the data on ``grid`` and report every violated assumption.

    Labels: ``reg2`` (bounds of initial and in-flux data), ``reg3`` (drag),
    ``reg4`` (phase intervals and phase membership), ``compatibility``
    (boundary flux balance), ``finite``.  Cell samples are located by flat
    cell index, face samples by boundary face id.
    """
    grid = grid or sc.build_grid()
    rep = ValidationReport(sample_times=tuple(validation_times(sc)))
    x, y = grid.cell_coords()
    bfa = grid.boundary_arrays()
    mid, fid = bfa["midpoint"], bfa["face_id"]
    cell_ids = np.arange(grid.n_cells)
    try:
        bounds = sc.bounds
    except DataError as exc:
        rep.issues.append(Issue("reg2", str(exc)))
        bounds = None
    phases = None
    try:
        phases = sc.phases
    except DataError as exc:
        rep.issues.append(Issue("reg4", str(exc)))
    if sc.m < 0:
        rep.issues.append(Issue("reg3", f"drag exponent m = {_fmt(sc.m)} is negative", -sc.m))
    for key in ("q", "s"):
        if getattr(sc, key) <= 1:
            rep.issues.append(Issue("exponents", f"integrability exponent {key} must exceed 1"))

    for t in rep.sample_times:
        t = float(t)
        samples = {
            "rho0": sample(sc.rho0, t, x, y).ravel() if t == 0 else None,
            "nu0": sample(sc.nu0, t, x, y).ravel() if t == 0 else None,
            "h0": sample(sc.h0, t, x, y).ravel(),
        }
        bn = sample_normal_velocity(grid, sc.b, t)
        inflow = bn < 0
        rb = sample(sc.rho_b, t, mid[:, 0], mid[:, 1])
        nb = sample(sc.nu_b, t, mid[:, 0], mid[:, 1])
        for name, arr in [*samples.items(), ("b.n", bn), ("rho_b", rb), ("nu_b", nb)]:
            if arr is not None and not np.all(np.isfinite(arr)):
                rep.issues.append(Issue("finite", f"{name} not finite at t={_fmt(t)}"))
        if bounds is not None:
            checks = [("rho_b", rb[inflow], bounds.rho_min, bounds.rho_max, fid[inflow]),
                      ("nu_b", nb[inflow], bounds.nu_min, bounds.nu_max, fid[inflow])]
            if t == 0:
                checks += [("rho0", samples["rho0"], bounds.rho_min, bounds.rho_max, cell_ids),
                           ("nu0", samples["nu0"], bounds.nu_min, bounds.nu_max, cell_ids)]
            for what, vals, lo, hi, where in checks:
                issue = _range_issue("reg2", f"{what} (t={_fmt(t)})", vals, lo, hi, sc.resolved_tau_mp, where)
                if issue:
                    rep.issues.append(issue)
        h0 = samples["h0"]
        if np.any(h0 < 0):
            bad = np.nonzero(h0 < 0)[0]
            rep.issues.append(Issue("reg3", f"h0 negative at {bad.size} cell(s) (t={_fmt(t)})",
                                    float(-h0.min()), tuple(int(k) for k in bad[:50])))
        bv = sample_boundary_velocity(grid, sc.b, t)
        defect = bv.net_flux(grid)
        tol = sc.tau_comp if sc.tau_comp is not None else default_tau_comp(grid, bv.max_abs())
        if abs(defect) > tol:
            rep.issues.append(Issue("compatibility", f"net boundary flux {_fmt(defect)} exceeds {_fmt(tol)} "
                                    f"(t={_fmt(t)})", abs(defect)))
        if phases is not None:
            eps = phases.default_eps
            pairs = [("initial data", samples["rho0"], samples["nu0"], cell_ids)] if t == 0 else []
            pairs.append(("in-flux data", rb[inflow], nb[inflow], fid[inflow]))
            for what, r, nu, where in pairs:
                cr, cn = phases.classify(r, "rho", eps), phases.classify(nu, "nu", eps)
                bad = np.nonzero((cr == 0) | (cr != cn))[0]
                if bad.size:
                    rep.issues.append(Issue("reg4", f"{what} outside both phases at {bad.size} sample(s) "
                                            f"(t={_fmt(t)})", float(bad.size), tuple(int(where[k]) for k in bad[:50])))
    return rep


def format_validation(rep: ValidationReport) -> str:
    lines = []
    for issue in rep.issues:
        loc = f" at {list(issue.locations)}" if issue.locations else ""
        lines.append(f"[{issue.label}] {issue.message} (magnitude {_fmt(issue.magnitude)}){loc}")
    lines.append("validation: " + ("PASS" if rep.ok else "FAIL " + ",".join(rep.labels())))
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- writers

@dataclass
class SnapshotEntry:
    time: float
    state: MixtureState
    velocity: object  # VelocityPressure


def _companion(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(path, exc) from exc


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_snapshot(entry: Optional[SnapshotEntry], path, grid: StaggeredGrid) -> list[Path]:
    """Cell table at ``path``; u and v face tables next to it (``*_u.csv``, ``*_v.csv``)."""
    path = Path(path)
    files = [path, _companion(path, "u"), _companion(path, "v")]
    heads = [("i", "j", "x", "y", "rho", "nu", "p"), ("i", "j", "x", "y", "u"), ("i", "j", "x", "y", "v")]
    if entry is None:
        for f, h in zip(files, heads):
            _write_text(f, _csv_text(h, []))
        return files
    st, vp = entry.state, entry.velocity
    xc, yc = grid.x_centers, grid.y_centers
    xn, yn = grid.x_nodes, grid.y_nodes
    cells = ((i, j, float(xc[i]), float(yc[j]), float(st.rho[i, j]), float(st.nu[i, j]), float(vp.p[i, j]))
             for i in range(grid.nx) for j in range(grid.ny))
    ufaces = ((i, j, float(xn[i]), float(yc[j]), float(vp.u[i, j])) for i in range(grid.nx + 1) for j in range(grid.ny))
    vfaces = ((i, j, float(xc[i]), float(yn[j]), float(vp.v[i, j])) for i in range(grid.nx) for j in range(grid.ny + 1))
    for f, h, rows in zip(files, heads, (cells, ufaces, vfaces)):
        _write_text(f, _csv_text(h, rows))
    return files


def read_snapshot(path) -> dict[str, np.ndarray]:
    """Read a cell table back into 2-D arrays keyed by column name."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OutputError(path, exc) from exc
    if not rows:
        raise OutputError(path, ValueError("empty file"))
    header, body = rows[0], rows[1:]
    if not body:
        return {h: np.zeros((0, 0)) for h in header}
    data = np.array(body, dtype=float)
    i, j = data[:, 0].astype(int), data[:, 1].astype(int)
    shape = (i.max() + 1, j.max() + 1)
    out = {}
    for k, h in enumerate(header):
        arr = np.full(shape, np.nan)
        arr[i, j] = data[:, k]
        out[h] = arr
    return out


def write_traces(record, path) -> Path:
    """Trace table: time, face id, value, weight (one row per recorded face)."""
    rows = ((float(t), fid, float(v), float(w)) for t, fid, v, w in record.rows())
    _write_text(path, _csv_text(("time", "face_id", "value", "weight"), rows))
    return Path(path)


def write_report(path, scenario_name: str, rows: Sequence, checks: Sequence, passed: Optional[bool] = None,
                 tables: Optional[dict] = None) -> Path:
    """Plain-text report; ``rows`` are (section, key, value), ``checks`` have name/value/limit/passed."""
    lines = [REPORT_HEADER, f"scenario = {scenario_name}"]
    section = None
    for sec, key, val in rows:
        if sec != section:
            lines.append(f"[{sec}]")
            section = sec
        lines.append(f"{key} = {_fmt(val) if isinstance(val, (float, np.floating)) else val}")
    for name, (header, body) in (tables or {}).items():
        lines.append(f"[{name}]")
        lines.append(",".join(header))
        for r in body:
            lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    lines.append("[checks]")
    for c in checks:
        lines.append(f"{c.name} = {_fmt(c.value)} limit {_fmt(c.limit)} {'PASS' if c.passed else 'FAIL'}")
    ok = all(c.passed for c in checks if getattr(c, "hard", True)) if passed is None else passed
    lines.append(f"RESULT: {'PASS' if ok else 'FAIL'}")
    _write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def output_dir(default) -> Path:
    """Output directory, overridable by the ``MUSKAT_OUTPUT_DIR`` environment variable."""
    return Path(os.environ.get("MUSKAT_OUTPUT_DIR") or default)
