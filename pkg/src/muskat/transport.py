"""First-order upwind finite-volume transport with in-flux data and out-flux traces.

One explicit step of ``d_t r + div(v r) = 0`` reads

    r_i <- r_i - dt/|cell| * sum_faces F * r_upwind,   F = (v.n) * |face|,

with the in-flux datum as upwind value on in-flux boundary faces and zero
flux through tangential faces.  For a discretely divergence-free velocity
and ``dt * max_i(out-flux_i / |cell|) <= 1`` each new value is a convex
combination of old and in-flux values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import CFLViolation
from .fields import VelocityPressure, sample
from .grid import BoundaryPartition, StaggeredGrid


@dataclass
class TraceStep:
    """Boundary values crossing the boundary during one step.

    ``weights`` are ``|b.n| * |face| * dt``, so ``sum(values * weights)`` is
    the mass through those faces.
    """

    time: float
    dt: float
    face_ids: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * self.weights))


@dataclass
class TraceRecord:
    """Time-ordered sequence of :class:`TraceStep` for one boundary zone."""

    steps: list = field(default_factory=list)

    def append(self, step: TraceStep) -> None:
        if self.steps and step.time < self.steps[-1].time:
            raise ValueError("trace times must be nondecreasing")
        self.steps.append(step)

    @property
    def times(self) -> list[float]:
        return [s.time for s in self.steps]

    def total_mass(self) -> float:
        return float(sum(s.mass for s in self.steps))

    def rows(self):
        for s in self.steps:
            for fid, val, w in zip(s.face_ids, s.values, s.weights):
                yield s.time, int(fid), float(val), float(w)

    def value_range(self) -> tuple[float, float]:
        vals = [s.values for s in self.steps if s.values.size]
        if not vals:
            return (np.inf, -np.inf)
        allv = np.concatenate(vals)
        return float(allv.min()), float(allv.max())


@dataclass
class TraceIncrement:
    outflow: TraceStep
    inflow: TraceStep


InflowData = Union[Callable, np.ndarray, float]


def cfl_dt(grid: StaggeredGrid, vp: VelocityPressure, cfl: float, dt_max: float = np.inf) -> float:
    """``cfl * min(hx/max|u|, hy/max|v|)``, or ``dt_max`` for a fluid at rest."""
    umax, vmax = vp.max_speed()
    cand = []
    if umax > 0:
        cand.append(grid.hx / umax)
    if vmax > 0:
        cand.append(grid.hy / vmax)
    if not cand:
        return float(dt_max)
    return float(min(cfl * min(cand), dt_max))


def face_fluxes(grid: StaggeredGrid, vp: VelocityPressure, partition: BoundaryPartition):
    """Volume fluxes through x- and y-faces, tangential boundary faces zeroed."""
    Fx = vp.u * grid.hy
    Fy = vp.v * grid.hx
    nx, ny = grid.nx, grid.ny
    tang = partition.tangential_mask
    Fx[0, tang[:ny]] = 0.0
    Fx[-1, tang[ny:2 * ny]] = 0.0
    Fy[tang[2 * ny:2 * ny + nx], 0] = 0.0
    Fy[tang[2 * ny + nx:], -1] = 0.0
    return Fx, Fy


def admissible_dt(grid: StaggeredGrid, vp: VelocityPressure, partition: BoundaryPartition) -> float:
    """Largest dt keeping the upwind update a convex combination."""
    Fx, Fy = face_fluxes(grid, vp, partition)
    out = (np.maximum(Fx[1:], 0) + np.maximum(-Fx[:-1], 0)
           + np.maximum(Fy[:, 1:], 0) + np.maximum(-Fy[:, :-1], 0)) / grid.cell_area
    m = float(out.max(initial=0.0))
    return np.inf if m == 0 else 1.0 / m


def inflow_values(grid: StaggeredGrid, inflow: InflowData, partition: BoundaryPartition) -> np.ndarray:
    n = len(grid.boundary_faces)
    if callable(inflow):
        mid = grid.boundary_arrays()["midpoint"]
        return sample(inflow, partition.time, mid[:, 0], mid[:, 1])
    return np.array(np.broadcast_to(np.asarray(inflow, dtype=float), (n,)))


def advect(grid: StaggeredGrid, field: np.ndarray, vp: VelocityPressure, dt: float,
           inflow: InflowData, partition: BoundaryPartition) -> tuple[np.ndarray, TraceIncrement]:
    """Advance ``field`` by one explicit upwind step.

    ``inflow`` is a scalar sampler ``r_b(t, x, y)`` evaluated at the boundary
    midpoints at ``partition.time``, or values aligned with
    ``grid.boundary_faces``.  Returns the new field and the boundary traces
    of the step: the out-flux record holds the interior upwind value.
    """
    limit = admissible_dt(grid, vp, partition)
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolation(dt, limit)
    nx, ny = grid.nx, grid.ny
    Fx, Fy = face_fluxes(grid, vp, partition)
    rb = inflow_values(grid, inflow, partition)
    inn = partition.inflow_mask

    # upwind values on every face
    ux = np.empty((nx + 1, ny))
    ux[1:-1] = np.where(Fx[1:-1] > 0, field[:-1], field[1:])
    ux[0] = np.where(inn[:ny], rb[:ny], field[0])
    ux[-1] = np.where(inn[ny:2 * ny], rb[ny:2 * ny], field[-1])
    uy = np.empty((nx, ny + 1))
    uy[:, 1:-1] = np.where(Fy[:, 1:-1] > 0, field[:, :-1], field[:, 1:])
    uy[:, 0] = np.where(inn[2 * ny:2 * ny + nx], rb[2 * ny:2 * ny + nx], field[:, 0])
    uy[:, -1] = np.where(inn[2 * ny + nx:], rb[2 * ny + nx:], field[:, -1])

    Gx = Fx * ux
    Gy = Fy * uy
    net = (Gx[1:] - Gx[:-1]) + (Gy[:, 1:] - Gy[:, :-1])
    new = field - (dt / grid.cell_area) * net

    bvals = np.concatenate([ux[0], ux[-1], uy[:, 0], uy[:, -1]])
    bflux = np.concatenate([-Fx[0], Fx[-1], -Fy[:, 0], Fy[:, -1]])  # outward volume flux
    out = partition.outflow_mask
    ids = partition.face_ids
    inc = TraceIncrement(
        outflow=TraceStep(partition.time, dt, ids[out], bvals[out], bflux[out] * dt),
        inflow=TraceStep(partition.time, dt, ids[inn], bvals[inn], -bflux[inn] * dt),
    )
    return new, inc


def renormalized_advect(beta: Callable[[np.ndarray], np.ndarray], grid: StaggeredGrid, field: np.ndarray,
                        vp: VelocityPressure, dt: float, inflow: InflowData,
                        partition: BoundaryPartition) -> tuple[np.ndarray, TraceIncrement]:
    """Advance ``beta(field)`` with in-flux data ``beta(r_b)`` by the same scheme."""
    rb = inflow_values(grid, inflow, partition)
    return advect(grid, np.asarray(beta(field), dtype=float), vp, dt, np.asarray(beta(rb), dtype=float), partition)


def renormalization_step_defect(beta: Callable, grid: StaggeredGrid, field: np.ndarray, vp: VelocityPressure,
                                dt: float, inflow: InflowData, partition: BoundaryPartition) -> float:
    """L1 norm of advect(beta(r)) - beta(advect(r)) over one step."""
    a, _ = renormalized_advect(beta, grid, field, vp, dt, inflow, partition)
    r, _ = advect(grid, field, vp, dt, inflow, partition)
    return float(np.sum(np.abs(a - beta(r))) * grid.cell_area)


def total_mass(grid: StaggeredGrid, field: np.ndarray) -> float:
    return float(np.sum(field) * grid.cell_area)


def mass_ledger(initial: np.ndarray, final: np.ndarray, outflow: TraceRecord, inflow: TraceRecord,
                grid: StaggeredGrid) -> float:
    """|storage change + mass out - mass in|; zero for an exactly conservative run."""
    return abs(total_mass(grid, final) - total_mass(grid, initial) + outflow.total_mass() - inflow.total_mass())


def maximum_principle_bounds(field: np.ndarray, inflow_values: Optional[np.ndarray]) -> tuple[float, float]:
    lo, hi = float(field.min()), float(field.max())
    if inflow_values is not None and np.size(inflow_values):
        lo = min(lo, float(np.min(inflow_values)))
        hi = max(hi, float(np.max(inflow_values)))
    return lo, hi
