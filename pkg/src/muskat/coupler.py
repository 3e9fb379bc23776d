"""Drivers for the coupled Brinkman/transport system.

``run_march`` advances the quasi-static system step by step: velocity from
the current (rho, nu), then transport of both fields.  ``schauder_solve``
iterates the space-time map P: velocities at every time level from a frozen
guess, then transport over the whole horizon, repeated until successive
iterates agree in L2(0,T; L2)^2.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .brinkman import (assemble, body_force, drag_cells, lift_boundary, solve)
from .errors import CFLViolation, MuskatError, PreconditionError
from .fields import (BoundaryData, Bounds, DragModel, MixtureState, VelocityPressure, h1_seminorm,
                     mixture_viscosity)
from .grid import BoundaryPartition, StaggeredGrid, classify_boundary
from .transport import TraceIncrement, TraceRecord, admissible_dt, advect, cfl_dt

log = logging.getLogger(__name__)


@dataclass
class Problem:
    """Everything a driver needs, resolved from a scenario."""

    grid: StaggeredGrid
    data: BoundaryData
    drag: DragModel
    bounds: Bounds
    rho0: np.ndarray
    nu0: np.ndarray
    T: float
    cfl: float = 0.5
    dt_max: Optional[float] = None
    tau_solve: float = 1e-9
    tau_div: float = 1e-8
    tau_comp: Optional[float] = None
    tau_mp: float = 1e-12
    tau_n: Optional[float] = None
    harmonic: bool = False
    velocity_solver: str = "direct"
    steady_boundary: bool = False
    _bv_cache: dict = field(default_factory=dict, repr=False)
    _lift_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_scenario(cls, scenario) -> "Problem":
        grid = scenario.build_grid()
        state = scenario.initial_state(grid)
        return cls(grid=grid, data=scenario.boundary_data(), drag=scenario.drag_model(), bounds=state.bounds,
                   rho0=state.rho, nu0=state.nu, T=scenario.T, cfl=scenario.cfl, dt_max=scenario.dt_max,
                   tau_solve=scenario.tau_solve, tau_div=scenario.tau_div, tau_comp=scenario.tau_comp,
                   tau_mp=scenario.resolved_tau_mp, tau_n=scenario.tau_n,
                   harmonic=scenario.viscosity_average == "harmonic",
                   velocity_solver=scenario.velocity_solver, steady_boundary=scenario.steady_boundary)

    @property
    def effective_dt_max(self) -> float:
        if self.dt_max is not None:
            return self.dt_max
        return self.T / 100.0 if self.T > 0 else math.inf

    def initial_state(self) -> MixtureState:
        return MixtureState(self.rho0.copy(), self.nu0.copy(), self.bounds)

    def boundary_velocity(self, t: float):
        key = 0.0 if self.steady_boundary else t
        if key not in self._bv_cache:
            if len(self._bv_cache) > 4:
                self._bv_cache.clear()
            self._bv_cache[key] = self.data.velocity(self.grid, t)
        return self._bv_cache[key]

    def lift(self, t: float) -> VelocityPressure:
        key = 0.0 if self.steady_boundary else t
        if key not in self._lift_cache:
            if len(self._lift_cache) > 4:
                self._lift_cache.clear()
            self._lift_cache[key] = lift_boundary(self.grid, self.boundary_velocity(t), t, tau_comp=self.tau_comp,
                                                  velocity_solver=self.velocity_solver)
        return self._lift_cache[key]

    def partition(self, t: float) -> BoundaryPartition:
        return classify_boundary(self.grid, self.data.b, t, self.tau_n)

    def coefficients(self, rho: np.ndarray, nu: np.ndarray, t: float):
        mu = rho * nu
        h = drag_cells(self.grid, self.drag, t, mu)
        force = body_force(self.grid, rho, self.data.g, t)
        return mu, h, force

    def solve_velocity(self, rho: np.ndarray, nu: np.ndarray, t: float) -> VelocityPressure:
        mu, h, force = self.coefficients(rho, nu, t)
        system = assemble(self.grid, mu, h, force, self.boundary_velocity(t), t, harmonic=self.harmonic,
                          tau_comp=self.tau_comp, tau_solve=self.tau_solve, tau_div=self.tau_div)
        return solve(system, velocity_solver=self.velocity_solver)


def as_problem(obj) -> Problem:
    return obj if isinstance(obj, Problem) else Problem.from_scenario(obj)


@dataclass
class StepSummary:
    step: int
    time: float
    dt: float
    iterations: int
    divergence_residual: float
    momentum_residual: float
    energy_residual: float = float("nan")
    bound_violations: int = 0
    substeps: int = 1


@dataclass
class StepResult:
    state: MixtureState
    velocity: VelocityPressure
    dt: float
    partition: BoundaryPartition
    rho_trace: TraceIncrement
    nu_trace: TraceIncrement


@dataclass
class Trajectory:
    """Space-time discrete solution: states at ``times``, velocity used from each level."""

    grid: StaggeredGrid
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    partitions: list = field(default_factory=list)
    rho_out: TraceRecord = field(default_factory=TraceRecord)
    rho_in: TraceRecord = field(default_factory=TraceRecord)
    nu_out: TraceRecord = field(default_factory=TraceRecord)
    nu_in: TraceRecord = field(default_factory=TraceRecord)
    summaries: list = field(default_factory=list)

    @property
    def dts(self) -> list[float]:
        return [b - a for a, b in zip(self.times[:-1], self.times[1:])]

    def rho_array(self) -> np.ndarray:
        return np.stack([s.rho for s in self.states])

    def nu_array(self) -> np.ndarray:
        return np.stack([s.nu for s in self.states])

    def record(self, inc_rho: TraceIncrement, inc_nu: TraceIncrement) -> None:
        self.rho_out.append(inc_rho.outflow)
        self.rho_in.append(inc_rho.inflow)
        self.nu_out.append(inc_nu.outflow)
        self.nu_in.append(inc_nu.inflow)

    def velocity_norm(self) -> float:
        """Discrete L2(0,T; H1-seminorm) of the velocity, trapezoidal in time."""
        n = min(len(self.velocities), len(self.times))
        vals = np.array([h1_seminorm(self.velocities[k], self.grid) ** 2 for k in range(n)])
        if n < 2:
            return float(np.sqrt(vals.sum())) if n else 0.0
        w = trapezoid_weights(np.asarray(self.times[:n]))
        return float(np.sqrt(np.sum(w * vals)))


class MarchAborted(MuskatError, RuntimeError):
    def __init__(self, step: int, cause: Exception, partial: Trajectory):
        self.step = step
        self.cause = cause
        self.partial = partial
        super().__init__(f"march aborted at step {step}: {cause}")


def step(state: MixtureState, scenario, t: float, dt: Optional[float] = None,
         t_end: Optional[float] = None) -> StepResult:
    """One quasi-static step: Brinkman solve from the current state, then transport.

    ``dt`` (if given) is capped by the CFL bound of the solved velocity and
    by ``t_end - t``.
    """
    pb = as_problem(scenario)
    grid = pb.grid
    vp = pb.solve_velocity(state.rho, state.nu, t)
    part = pb.partition(t)
    limit = min(cfl_dt(grid, vp, pb.cfl, pb.effective_dt_max), admissible_dt(grid, vp, part))
    dt = limit if dt is None else min(dt, limit)
    if t_end is not None:
        dt = min(dt, t_end - t)
    rho, inc_rho = advect(grid, state.rho, vp, dt, pb.data.rho_b, part)
    nu, inc_nu = advect(grid, state.nu, vp, dt, pb.data.nu_b, part)
    return StepResult(MixtureState(rho, nu, state.bounds), vp, dt, part, inc_rho, inc_nu)


def run_march(scenario, *, diagnose: bool = True, max_steps: int = 1_000_000) -> Trajectory:
    """March from t = 0 to T; every time level keeps its state and velocity."""
    from .diagnostics import bounds_check, energy_report

    pb = as_problem(scenario)
    grid = pb.grid
    state = pb.initial_state()
    traj = Trajectory(grid, [0.0], [state])
    t = 0.0
    n = 0
    while t < pb.T:
        if n >= max_steps:
            raise MarchAborted(n, RuntimeError("step limit reached"), traj)
        try:
            res = step(state, pb, t, t_end=pb.T)
        except MuskatError as exc:
            raise MarchAborted(n, exc, traj) from exc
        if res.dt <= 0:
            raise MarchAborted(n, RuntimeError("nonpositive time step"), traj)
        summary = StepSummary(n, t, res.dt, res.velocity.iterations, res.velocity.divergence_residual,
                              res.velocity.momentum_residual)
        if diagnose:
            mu, h, force = pb.coefficients(state.rho, state.nu, t)
            summary.energy_residual = energy_report(grid, res.velocity, mu, h, force, pb.lift(t),
                                                    harmonic=pb.harmonic)
            summary.bound_violations = len(bounds_check(res.state, pb.tau_mp))
        traj.velocities.append(res.velocity)
        traj.partitions.append(res.partition)
        traj.record(res.rho_trace, res.nu_trace)
        traj.summaries.append(summary)
        t = pb.T if pb.T - (t + res.dt) <= 1e-14 * max(pb.T, 1.0) else t + res.dt
        state = res.state
        traj.times.append(t)
        traj.states.append(state)
        n += 1
    # velocity at the final level, so every time carries a (state, velocity) pair
    traj.velocities.append(pb.solve_velocity(state.rho, state.nu, t))
    traj.partitions.append(pb.partition(t))
    return traj


# ------------------------------------------------------------ Schauder mode

def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    if times.size < 2:
        return w
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def space_time_norm(grid: StaggeredGrid, times, field_series: np.ndarray) -> float:
    """Space-time L2 norm, midpoint in space and trapezoidal in time."""
    w = trapezoid_weights(np.asarray(times))
    sq = np.array([np.sum(f * f) for f in field_series]) * grid.cell_area
    return float(np.sqrt(np.sum(w * sq)))


def space_time_distance(grid: StaggeredGrid, times, rho_a, nu_a, rho_b, nu_b) -> float:
    """Space-time L2 norm of the rho difference plus that of the nu difference."""
    return (space_time_norm(grid, times, np.asarray(rho_a) - np.asarray(rho_b))
            + space_time_norm(grid, times, np.asarray(nu_a) - np.asarray(nu_b)))


def schauder_time_grid(scenario, n_probe: int = 5) -> np.ndarray:
    """Uniform time levels fixed before the iteration.

    The step is the CFL step of the largest velocity found by solving with
    the initial data at ``n_probe`` probe times; transport substeps cover
    later iterates whose velocity exceeds that estimate.
    """
    pb = as_problem(scenario)
    if pb.T <= 0:
        return np.array([0.0])
    dt = pb.effective_dt_max
    for t in np.linspace(0.0, pb.T, n_probe):
        vp = pb.solve_velocity(pb.rho0, pb.nu0, float(t))
        dt = min(dt, cfl_dt(pb.grid, vp, pb.cfl, pb.effective_dt_max),
                 admissible_dt(pb.grid, vp, pb.partition(float(t))))
    n = max(1, int(math.ceil(pb.T / dt - 1e-9)))
    return np.linspace(0.0, pb.T, n + 1)


def picard_map(guess_rho: np.ndarray, guess_nu: np.ndarray, scenario, times: Sequence[float]) -> Trajectory:
    """Discrete P(rho_bar, nu_bar).

    Velocities at every level come from the guess; (rho, nu) are then
    transported over the horizon with those frozen velocities.
    """
    pb = as_problem(scenario)
    grid = pb.grid
    times = np.asarray(times, dtype=float)
    guess_rho = np.asarray(guess_rho)
    guess_nu = np.asarray(guess_nu)
    if guess_rho.shape[0] != times.size or guess_nu.shape[0] != times.size:
        raise PreconditionError("guess must provide one field per time level")
    for k in range(times.size):
        MixtureState(guess_rho[k], guess_nu[k], pb.bounds).require_admissible(pb.tau_mp)

    state = pb.initial_state()
    traj = Trajectory(grid, [float(times[0])], [state])
    for n in range(times.size - 1):
        t, dt = float(times[n]), float(times[n + 1] - times[n])
        vp = pb.solve_velocity(guess_rho[n], guess_nu[n], t)
        part = pb.partition(t)
        limit = admissible_dt(grid, vp, part)
        nsub = max(1, int(math.ceil(dt / limit - 1e-12))) if np.isfinite(limit) else 1
        sub = dt / nsub
        rho, nu = state.rho, state.nu
        for k in range(nsub):
            try:
                rho, inc_rho = advect(grid, rho, vp, sub, pb.data.rho_b, part)
                nu, inc_nu = advect(grid, nu, vp, sub, pb.data.nu_b, part)
            except CFLViolation as exc:  # pragma: no cover - guarded by nsub
                raise MarchAborted(n, exc, traj) from exc
            traj.record(inc_rho, inc_nu)
        state = MixtureState(rho, nu, pb.bounds)
        traj.velocities.append(vp)
        traj.partitions.append(part)
        traj.summaries.append(StepSummary(n, t, dt, vp.iterations, vp.divergence_residual,
                                          vp.momentum_residual, substeps=nsub))
        traj.times.append(float(times[n + 1]))
        traj.states.append(state)
    t_last = float(times[-1])
    traj.velocities.append(pb.solve_velocity(guess_rho[-1], guess_nu[-1], t_last))
    traj.partitions.append(pb.partition(t_last))
    return traj


@dataclass
class PicardHistory:
    iterates: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    velocity_norms: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    converged: bool = False
    k_final: int = 0
    tol: float = 0.0

    def rows(self):
        """(k, d_k, L2(H1) velocity norm) per iteration."""
        for k, (d, vn) in enumerate(zip(self.distances, self.velocity_norms), start=1):
            yield k, d, vn


def initial_data_norm(pb: Problem, times) -> float:
    series_r = np.broadcast_to(pb.rho0, (len(times),) + pb.rho0.shape)
    series_n = np.broadcast_to(pb.nu0, (len(times),) + pb.nu0.shape)
    return space_time_norm(pb.grid, times, series_r) + space_time_norm(pb.grid, times, series_n)


def schauder_solve(scenario, tol_P: Optional[float] = None, max_iter: int = 50, guess: str | tuple = "initial",
                   theta: float = 1.0, times: Optional[Sequence[float]] = None,
                   keep_iterates: bool = True) -> tuple[Trajectory, PicardHistory]:
    """Picard iteration on P until ``d_k <= tol_P`` or ``max_iter``.

    ``guess`` is ``"initial"`` (initial data held constant in time) or a pair
    of arrays of shape (n_times, nx, ny).  ``theta`` < 1 under-relaxes the
    update; the relaxed guess stays admissible because the admissible set is convex.
    Non-convergence is reported through ``history.converged``, not raised.
    """
    if not (0.0 < theta <= 1.0):
        raise PreconditionError(f"relaxation theta must lie in (0, 1], got {theta}")
    pb = as_problem(scenario)
    times = schauder_time_grid(pb) if times is None else np.asarray(times, dtype=float)
    if isinstance(guess, str):
        if guess != "initial":
            raise PreconditionError(f"unknown guess policy {guess!r}")
        g_rho = np.repeat(pb.rho0[None], times.size, axis=0)
        g_nu = np.repeat(pb.nu0[None], times.size, axis=0)
    else:
        g_rho, g_nu = (np.array(a, dtype=float) for a in guess)
    if tol_P is None:
        tol_P = 1e-6 * initial_data_norm(pb, times)

    hist = PicardHistory(tol=tol_P)
    traj = None
    for k in range(1, max_iter + 1):
        t0 = _time.perf_counter()
        traj = picard_map(g_rho, g_nu, pb, times)
        out_rho, out_nu = traj.rho_array(), traj.nu_array()
        d = space_time_distance(pb.grid, times, out_rho, out_nu, g_rho, g_nu)
        hist.distances.append(d)
        hist.velocity_norms.append(traj.velocity_norm())
        hist.wall_times.append(_time.perf_counter() - t0)
        if keep_iterates:
            hist.iterates.append(traj)
        hist.k_final = k
        log.info("picard k=%d d=%.3e |v|=%.4g", k, d, hist.velocity_norms[-1])
        if d <= tol_P:
            hist.converged = True
            break
        if theta == 1.0:
            g_rho, g_nu = out_rho, out_nu
        else:
            g_rho = theta * out_rho + (1.0 - theta) * g_rho
            g_nu = theta * out_nu + (1.0 - theta) * g_nu
    return traj, hist


def interpolate_in_time(traj: Trajectory, times: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear interpolation of (rho, nu) onto other time levels."""
    src = np.asarray(traj.times)
    R, N = traj.rho_array(), traj.nu_array()
    out_r, out_n = [], []
    for t in times:
        k = int(np.clip(np.searchsorted(src, t, side="right") - 1, 0, max(src.size - 2, 0)))
        if src.size == 1:
            out_r.append(R[0])
            out_n.append(N[0])
            continue
        a = (t - src[k]) / (src[k + 1] - src[k])
        a = min(max(a, 0.0), 1.0)
        out_r.append((1 - a) * R[k] + a * R[k + 1])
        out_n.append((1 - a) * N[k] + a * N[k + 1])
    return np.stack(out_r), np.stack(out_n)


def coarsen(field: np.ndarray, factor: int = 2) -> np.ndarray:
    """Average blocks of ``factor x factor`` cells."""
    nx, ny = field.shape[-2:]
    shp = field.shape[:-2] + (nx // factor, factor, ny // factor, factor)
    return field.reshape(shp).mean(axis=(-3, -1))
