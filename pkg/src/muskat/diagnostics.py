"""Runtime checks and refinement observables for trajectories.

Everything here is a pure function of its inputs: the same trajectory gives
bitwise identical diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from .brinkman import (drag_energy, operator_norm_bound, force_work, strain_energy, strain_operators,
                       symmetric_gradient, velocity_vector)
from .errors import DataError
from .fields import MixtureState, VelocityPressure
from .grid import StaggeredGrid
from .transport import TraceRecord, advect, inflow_values, mass_ledger, renormalized_advect

if TYPE_CHECKING:  # pragma: no cover
    from .coupler import Problem, Trajectory


# ------------------------------------------------------------ bounds

@dataclass(frozen=True)
class BoundViolation:
    field: str
    i: int
    j: int
    value: float
    excess: float


def bounds_check(state: MixtureState, tau_mp: float = 0.0, bounds=None) -> list[BoundViolation]:
    """Cells outside the admissible intervals by more than ``tau_mp``."""
    b = bounds or state.bounds
    out = []
    for name, f, lo, hi in (("rho", state.rho, b.rho_min, b.rho_max), ("nu", state.nu, b.nu_min, b.nu_max)):
        excess = np.maximum(lo - f, f - hi)
        for i, j in zip(*np.nonzero(excess > tau_mp)):
            out.append(BoundViolation(name, int(i), int(j), float(f[i, j]), float(excess[i, j])))
    return out


# ------------------------------------------------------------ phases

@dataclass(frozen=True)
class PhaseSpec:
    """Density and viscosity intervals of the two phases; phase 1 lies below phase 2."""

    rho1: tuple[float, float]
    nu1: tuple[float, float]
    rho2: tuple[float, float]
    nu2: tuple[float, float]

    def __post_init__(self):
        for name, (lo, hi) in (("rho1", self.rho1), ("nu1", self.nu1), ("rho2", self.rho2), ("nu2", self.nu2)):
            if not (0 < lo <= hi):
                raise DataError("reg4", f"phase interval {name} = [{lo}, {hi}] must be positive and ordered")
        if not self.rho1[1] < self.rho2[0]:
            raise DataError("reg4", f"density intervals overlap: {self.rho1} vs {self.rho2}")
        if not self.nu1[1] < self.nu2[0]:
            raise DataError("reg4", f"viscosity intervals overlap: {self.nu1} vs {self.nu2}")

    @property
    def default_eps(self) -> float:
        return 1e-9 * (self.rho2[0] - self.rho1[1])

    def classify(self, values: np.ndarray, which: str, eps: float) -> np.ndarray:
        """0 = mixed, 1 or 2 = inside the (dilated) phase interval."""
        i1, i2 = (self.rho1, self.rho2) if which == "rho" else (self.nu1, self.nu2)
        out = np.zeros(np.shape(values), dtype=np.int8)
        out[(values >= i1[0] - eps) & (values <= i1[1] + eps)] = 1
        out[(values >= i2[0] - eps) & (values <= i2[1] + eps)] = 2
        return out


@dataclass
class MixingRow:
    time: float
    area1: float
    area2: float
    mixed: float
    symmetric_difference: float

    @property
    def total(self) -> float:
        return self.area1 + self.area2 + self.mixed


def mixing_measure(grid: StaggeredGrid, state: MixtureState, phases: PhaseSpec, eps_mix: Optional[float] = None,
                   time: float = 0.0) -> MixingRow:
    """Cell areas of phase 1, phase 2 and mixed cells.

    A cell belongs to phase i when both rho and nu lie in the phase-i
    intervals.  The symmetric difference counts cells whose phase by rho
    differs from their phase by nu; those are always mixed cells.
    """
    eps = phases.default_eps if eps_mix is None else eps_mix
    cr = phases.classify(state.rho, "rho", eps)
    cn = phases.classify(state.nu, "nu", eps)
    n1 = int(np.count_nonzero((cr == 1) & (cn == 1)))
    n2 = int(np.count_nonzero((cr == 2) & (cn == 2)))
    nmix = grid.n_cells - n1 - n2
    nsym = int(np.count_nonzero(cr != cn))
    a = grid.cell_area
    return MixingRow(time, n1 * a, n2 * a, nmix * a, nsym * a)


@dataclass
class TraceMixing:
    weight1: float
    weight2: float
    mixed: float


def trace_mixing(rho_rec: TraceRecord, nu_rec: TraceRecord, phases: PhaseSpec,
                 eps_mix: Optional[float] = None) -> TraceMixing:
    """Out-flux measure carried by phase-1, phase-2 and mixed trace values."""
    eps = phases.default_eps if eps_mix is None else eps_mix
    w1 = w2 = wm = 0.0
    for sr, sn in zip(rho_rec.steps, nu_rec.steps):
        cr = phases.classify(sr.values, "rho", eps)
        cn = phases.classify(sn.values, "nu", eps)
        both1 = (cr == 1) & (cn == 1)
        both2 = (cr == 2) & (cn == 2)
        w1 += float(np.sum(sr.weights[both1]))
        w2 += float(np.sum(sr.weights[both2]))
        wm += float(np.sum(sr.weights[~(both1 | both2)]))
    return TraceMixing(w1, w2, wm)


# ----------------------------------------------------- renormalization

def square(r):
    return np.asarray(r) ** 2


@dataclass
class RenormalizationReport:
    per_step: list
    cumulative: list

    @property
    def total(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0


def renormalization_defect(traj: "Trajectory", inflow, beta: Callable = square,
                           which: str = "rho") -> RenormalizationReport:
    """L1 norm of advect(beta(r)) - beta(advect(r)) per step, accumulated.

    ``inflow`` is the in-flux sampler of the advected field.  Steps made of
    several transport substeps are replayed with the same substeps.
    """
    grid = traj.grid
    per, cum, acc = [], [], 0.0
    for n in range(len(traj.times) - 1):
        r = traj.states[n].rho if which == "rho" else traj.states[n].nu
        vp, part = traj.velocities[n], traj.partitions[n]
        dt = traj.times[n + 1] - traj.times[n]
        nsub = traj.summaries[n].substeps if n < len(traj.summaries) else 1
        sub = dt / nsub
        plain = r
        for _ in range(nsub):
            plain, _ = advect(grid, plain, vp, sub, inflow, part)
        a, _ = renormalized_advect(beta, grid, r, vp, sub, inflow, part)
        if nsub > 1:
            beta_inflow = np.asarray(beta(inflow_values(grid, inflow, part)), dtype=float)
            for _ in range(nsub - 1):
                a, _ = advect(grid, a, vp, sub, beta_inflow, part)
        d = float(np.sum(np.abs(a - beta(plain))) * grid.cell_area)
        acc += d
        per.append(d)
        cum.append(acc)
    return RenormalizationReport(per, cum)


# ---------------------------------------------------- weak formulation

@dataclass(frozen=True)
class WeakTestFunction:
    """phi(t, X, Y) in normalised coordinates, with its t-, X- and Y-derivatives."""

    name: str
    f: Callable
    dt: Callable
    dX: Callable
    dY: Callable


# the family is fixed: residual fixtures depend on it (version 1)
WEAK_FAMILY_VERSION = 1


def weak_test_family(T: float) -> list[WeakTestFunction]:
    p = np.pi
    return [
        WeakTestFunction("sinsin",
                     lambda t, X, Y: (T - t) * np.sin(p * X) * np.sin(p * Y),
                     lambda t, X, Y: -np.sin(p * X) * np.sin(p * Y),
                     lambda t, X, Y: (T - t) * p * np.cos(p * X) * np.sin(p * Y),
                     lambda t, X, Y: (T - t) * p * np.sin(p * X) * np.cos(p * Y)),
        WeakTestFunction("poly",
                     lambda t, X, Y: (T - t) * (1 + X + Y ** 2),
                     lambda t, X, Y: -(1 + X + Y ** 2) + 0 * X,
                     lambda t, X, Y: (T - t) * np.ones_like(X),
                     lambda t, X, Y: (T - t) * 2 * Y),
        WeakTestFunction("coscos",
                     lambda t, X, Y: (T - t) ** 2 * np.cos(p * X) * np.cos(p * Y),
                     lambda t, X, Y: -2 * (T - t) * np.cos(p * X) * np.cos(p * Y),
                     lambda t, X, Y: -(T - t) ** 2 * p * np.sin(p * X) * np.cos(p * Y),
                     lambda t, X, Y: -(T - t) ** 2 * p * np.cos(p * X) * np.sin(p * Y)),
    ]


def _zero_test() -> WeakTestFunction:
    z = lambda t, X, Y: 0.0 * X  # noqa: E731
    return WeakTestFunction("zero", z, z, z, z)


def _cell_velocity(vp: VelocityPressure) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * (vp.u[1:] + vp.u[:-1]), 0.5 * (vp.v[:, 1:] + vp.v[:, :-1])


def _boundary_midpoints(grid: StaggeredGrid) -> dict[int, tuple[float, float]]:
    arr = grid.boundary_arrays()
    return dict(zip(arr["face_id"].tolist(), map(tuple, arr["midpoint"])))


def _normalise(grid: StaggeredGrid, x, y):
    return (np.asarray(x) - grid.origin[0]) / grid.extent[0], (np.asarray(y) - grid.origin[1]) / grid.extent[1]


def transport_identity(traj: "Trajectory", which: str, phi: WeakTestFunction) -> tuple[float, float]:
    """Residual and scale of the weak transport identity for one test function.

    Terms: int r (phi_t + v.grad phi) + int r0 phi(0) - int_out r_o phi dmu+
    + int_in r_b phi dmu-.  The time derivative is taken as the exact
    increment of phi over each step, paired with the end-of-step state.  The
    scale is the sum of the integrals of the absolute integrands.
    """
    grid = traj.grid
    X, Y = _normalise(grid, *grid.cell_coords())
    sx, sy = 1.0 / grid.extent[0], 1.0 / grid.extent[1]
    area = grid.cell_area
    states = [s.rho if which == "rho" else s.nu for s in traj.states]
    t = traj.times
    total, scale = 0.0, 0.0

    def add(integrand, weight):
        nonlocal total, scale
        total += float(np.sum(integrand)) * weight
        scale += float(np.sum(np.abs(integrand))) * weight

    add(states[0] * phi.f(t[0], X, Y), area)
    for n in range(len(t) - 1):
        add(states[n + 1] * (phi.f(t[n + 1], X, Y) - phi.f(t[n], X, Y)), area)
        tm = 0.5 * (t[n] + t[n + 1])
        uc, vc = _cell_velocity(traj.velocities[n])
        add(states[n] * (uc * phi.dX(tm, X, Y) * sx + vc * phi.dY(tm, X, Y) * sy), area * (t[n + 1] - t[n]))
    mids = _boundary_midpoints(grid)
    out_rec = traj.rho_out if which == "rho" else traj.nu_out
    in_rec = traj.rho_in if which == "rho" else traj.nu_in
    for rec, sign in ((out_rec, -1.0), (in_rec, 1.0)):
        for s in rec.steps:
            if not s.face_ids.size:
                continue
            xy = np.array([mids[int(f)] for f in s.face_ids])
            Xb, Yb = _normalise(grid, xy[:, 0], xy[:, 1])
            add(sign * s.values * s.weights * phi.f(s.time + 0.5 * s.dt, Xb, Yb), 1.0)
    return abs(total), scale


def _stream_test(grid: StaggeredGrid, x, y):
    """psi = curl(chi), chi = sin^2(pi X) sin^2(pi Y): div-free, zero on the boundary.

    Returns psi components and the symmetric gradient entries.
    """
    p = np.pi
    X, Y = _normalise(grid, x, y)
    sx, sy = 1.0 / grid.extent[0], 1.0 / grid.extent[1]
    s2x, s2y = np.sin(p * X) ** 2, np.sin(p * Y) ** 2
    d2x, d2y = p * np.sin(2 * p * X), p * np.sin(2 * p * Y)            # derivatives of s2
    dd2x, dd2y = 2 * p * p * np.cos(2 * p * X), 2 * p * p * np.cos(2 * p * Y)
    # psi = (chi_y, -chi_x)
    psi1 = s2x * d2y * sy
    psi2 = -d2x * s2y * sx
    d11 = d2x * d2y * sx * sy
    d22 = -d2x * d2y * sx * sy
    dpsi1_dy = s2x * dd2y * sy * sy
    dpsi2_dx = -dd2x * s2y * sx * sx
    d12 = 0.5 * (dpsi1_dy + dpsi2_dx)
    return psi1, psi2, d11, d22, d12


def momentum_identity(traj: "Trajectory", problem: "Problem") -> tuple[float, float]:
    """Weak momentum identity with a fixed divergence-free test field, integrated over time."""
    from .coupler import trapezoid_weights

    grid = traj.grid
    x, y = grid.cell_coords()
    psi1, psi2, d11, d22, d12 = _stream_test(grid, x, y)
    area = grid.cell_area
    n = min(len(traj.velocities), len(traj.times))
    w = trapezoid_weights(np.asarray(traj.times[:n])) if n > 1 else np.ones(n)
    res = 0.0
    scale = 0.0
    for k in range(n):
        st, vp, t = traj.states[k], traj.velocities[k], traj.times[k]
        mu, h, _ = problem.coefficients(st.rho, st.nu, t)
        D = symmetric_gradient(grid, vp)
        uc, vc = _cell_velocity(vp)
        gx, gy = problem.data.g(t, x, y)
        visc = mu * (D[..., 0, 0] * d11 + D[..., 1, 1] * d22 + 2 * D[..., 0, 1] * d12)
        drag = h * (uc * psi1 + vc * psi2)
        frc = st.rho * (np.asarray(gx) * psi1 + np.asarray(gy) * psi2)
        res += w[k] * (np.sum(visc) + np.sum(drag) - np.sum(frc)) * area
        scale += w[k] * (np.sum(np.abs(visc)) + np.sum(np.abs(drag)) + np.sum(np.abs(frc))) * area
    return float(abs(res)), float(scale)


@dataclass
class WeakFormReport:
    rho: dict
    nu: dict
    momentum: float

    def max_residual(self) -> float:
        return max([*self.rho.values(), *self.nu.values(), self.momentum])


def _relative(res: float, scale: float) -> float:
    return 0.0 if scale == 0 else res / scale


def weak_form_residual(traj: "Trajectory", problem: "Problem",
                       tests: Optional[Sequence[WeakTestFunction]] = None) -> WeakFormReport:
    """Relative residuals of the two transport identities and the momentum identity."""
    tests = weak_test_family(traj.times[-1]) if tests is None else tests
    rho, nu = {}, {}
    for phi in tests:
        rho[phi.name] = _relative(*transport_identity(traj, "rho", phi))
        nu[phi.name] = _relative(*transport_identity(traj, "nu", phi))
    return WeakFormReport(rho, nu, _relative(*momentum_identity(traj, problem)))


# -------------------------------------------------------- stress, energy

def stress_field(grid: StaggeredGrid, vp: VelocityPressure, mu: np.ndarray) -> np.ndarray:
    """Cauchy stress -p I + 2 mu Dv per cell, shape (nx, ny, 2, 2)."""
    D = symmetric_gradient(grid, vp)
    T = 2.0 * np.asarray(mu)[..., None, None] * D
    T[..., 0, 0] -= vp.p
    T[..., 1, 1] -= vp.p
    # D is symmetric, so T is too; copy the off-diagonal to make it exact
    T[..., 1, 0] = T[..., 0, 1]
    return T


@dataclass
class EnergyReport:
    """``residual`` is the backward-error ratio used by checks.

    ``energy_relative`` divides by the energy terms alone; it carries no
    information when those terms are themselves round-off.
    """

    lhs: float
    rhs: float
    residual: float
    energy_relative: float = 0.0


def energy_identity(grid: StaggeredGrid, vp: VelocityPressure, mu: np.ndarray, h: np.ndarray, force,
                    lift: Optional[VelocityPressure], harmonic: bool = False) -> EnergyReport:
    """sum(mu Dz:Dz + h|z|^2) against sum(f.z - mu Dv_b:Dz - h v_b.z), z = v - v_b."""
    w = velocity_vector(grid, vp)
    wb = np.zeros_like(w) if lift is None else velocity_vector(grid, lift)
    z = w - wb
    a = strain_energy(grid, mu, z, z, harmonic)
    b = drag_energy(grid, h, z, z)
    c = force_work(grid, force, z)
    d = strain_energy(grid, mu, wb, z, harmonic)
    e = drag_energy(grid, h, wb, z)
    lhs, rhs = a + b, c - d - e
    # backward-error scale |z| (|K| |w| + |f|): keeps the ratio meaningful when v
    # equals its lift and every energy term is round-off
    ops = strain_operators(grid)
    f = np.concatenate([np.ravel(force[0]), np.ravel(force[1]), np.zeros(w.size - grid.n_faces)])
    f[: grid.n_faces] *= ops.face_weight
    knorm = operator_norm_bound(grid, mu, h, harmonic)
    terms = abs(a) + abs(b) + abs(c) + abs(d) + abs(e)
    scale = terms + float(np.linalg.norm(z) * (knorm * np.linalg.norm(w) + np.linalg.norm(f)))
    gap = abs(lhs - rhs)
    return EnergyReport(lhs, rhs, 0.0 if scale == 0 else gap / scale, 0.0 if terms == 0 else gap / terms)


def energy_report(grid: StaggeredGrid, vp: VelocityPressure, mu: np.ndarray, h: np.ndarray, force,
                  lift: Optional[VelocityPressure], harmonic: bool = False) -> float:
    """Relative residual of the discrete energy identity."""
    return energy_identity(grid, vp, mu, h, force, lift, harmonic).residual


# -------------------------------------------------- trajectory summary

@dataclass
class Check:
    name: str
    value: float
    limit: float
    hard: bool = True

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.limit)


@dataclass
class TrajectorySummary:
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)      # (section, key, value)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)


def data_range(traj: "Trajectory", which: str) -> tuple[float, float]:
    """Range of initial values and every in-flux value used by the trajectory."""
    f0 = traj.states[0].rho if which == "rho" else traj.states[0].nu
    lo, hi = float(f0.min()), float(f0.max())
    rec = traj.rho_in if which == "rho" else traj.nu_in
    rlo, rhi = rec.value_range()
    return min(lo, rlo), max(hi, rhi)


def max_principle_excess(traj: "Trajectory", which: str, tau_div: float) -> float:
    """Largest excursion outside the data range beyond dt * tau_div * max|field|."""
    lo, hi = data_range(traj, which)
    worst = 0.0
    for n in range(1, len(traj.states)):
        s = traj.states[n]
        f = s.rho if which == "rho" else s.nu
        slack = (traj.times[n] - traj.times[n - 1]) * tau_div * float(np.max(np.abs(f)))
        worst = max(worst, lo - float(f.min()) - slack, float(f.max()) - hi - slack)
    return worst


def summarize(traj: "Trajectory", problem: "Problem", phases: Optional[PhaseSpec] = None,
              weak_form: bool = True) -> TrajectorySummary:
    """Hard invariant checks plus informational rows for the report."""
    grid = traj.grid
    out = TrajectorySummary()
    div = max((v.divergence_residual for v in traj.velocities), default=0.0)
    out.checks.append(Check("divergence_residual", div, problem.tau_div))
    energies = [s.energy_residual for s in traj.summaries if np.isfinite(s.energy_residual)]
    out.checks.append(Check("energy_residual", max(energies, default=0.0), 10 * problem.tau_solve))
    nviol = sum(len(bounds_check(s, problem.tau_mp)) for s in traj.states)
    out.checks.append(Check("bound_violations", float(nviol), 0.0))
    for which in ("rho", "nu"):
        out.checks.append(Check(f"max_principle_{which}", max_principle_excess(traj, which, problem.tau_div), 0.0))
        initial = traj.states[0].rho if which == "rho" else traj.states[0].nu
        final = traj.states[-1].rho if which == "rho" else traj.states[-1].nu
        rec_out = traj.rho_out if which == "rho" else traj.nu_out
        rec_in = traj.rho_in if which == "rho" else traj.nu_in
        ledger = mass_ledger(initial, final, rec_out, rec_in, grid)
        m0 = float(np.sum(np.abs(initial)) * grid.cell_area)
        out.checks.append(Check(f"mass_ledger_{which}", ledger, 1e-10 * max(m0, rec_in.total_mass())))
    out.rows.append(("run", "steps", len(traj.times) - 1))
    out.rows.append(("run", "final_time", traj.times[-1]))
    out.rows.append(("run", "max_schur_iterations", max((v.iterations for v in traj.velocities), default=0)))
    if phases is not None:
        for n, (t, s) in enumerate(zip(traj.times, traj.states)):
            if n in (0, len(traj.times) - 1):
                m = mixing_measure(grid, s, phases, time=t)
                tag = "initial" if n == 0 else "final"
                out.rows.append(("mixing", f"{tag}_area1", m.area1))
                out.rows.append(("mixing", f"{tag}_area2", m.area2))
                out.rows.append(("mixing", f"{tag}_mixed", m.mixed))
                out.rows.append(("mixing", f"{tag}_symmetric_difference", m.symmetric_difference))
        tm = trace_mixing(traj.rho_out, traj.nu_out, phases)
        out.rows.append(("mixing", "trace_weight1", tm.weight1))
        out.rows.append(("mixing", "trace_weight2", tm.weight2))
        out.rows.append(("mixing", "trace_mixed", tm.mixed))
    if weak_form and len(traj.times) > 1:
        wf = weak_form_residual(traj, problem)
        for k, v in wf.rho.items():
            out.rows.append(("weak_form", f"rho_{k}", v))
        for k, v in wf.nu.items():
            out.rows.append(("weak_form", f"nu_{k}", v))
        out.rows.append(("weak_form", "momentum", wf.momentum))
    return out

