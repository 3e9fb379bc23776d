"""Convergence and refinement studies shared by the CLI and the test suite."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .brinkman import sample_force, solve_brinkman
from .coupler import Problem, coarsen, interpolate_in_time, run_march, space_time_distance
from .diagnostics import mixing_measure, renormalization_defect, weak_form_residual
from .fields import velocity_from_function
from .grid import build_grid

PI = np.pi


def mms_velocity(t, x, y):
    return np.sin(PI * x) * np.cos(PI * y), -np.cos(PI * x) * np.sin(PI * y)


def mms_pressure(x, y):
    return np.cos(PI * x) * np.cos(PI * y)


def mms_force(t, x, y):
    """Force for the manufactured pair with mu = h = 1: (1 + pi^2) v + grad p."""
    vx, vy = mms_velocity(t, x, y)
    return ((1 + PI ** 2) * vx - PI * np.sin(PI * x) * np.cos(PI * y),
            (1 + PI ** 2) * vy - PI * np.cos(PI * x) * np.sin(PI * y))


@dataclass
class MMSRow:
    n: int
    velocity_error: float
    pressure_error: float
    iterations: int
    divergence_residual: float
    ratio: float = float("nan")


def mms_error(n: int, velocity_solver: str = "direct") -> MMSRow:
    """Discrete L2 errors of the manufactured solution on an n x n unit square."""
    g = build_grid((0.0, 0.0), (1.0, 1.0), n, n)
    vp = solve_brinkman(g, np.ones((n, n)), 1.0, sample_force(g, mms_force), mms_velocity,
                        velocity_solver=velocity_solver)
    ex = velocity_from_function(g, mms_velocity)
    ev = np.sqrt((np.sum((vp.u - ex.u) ** 2) + np.sum((vp.v - ex.v) ** 2)) * g.cell_area)
    x, y = g.cell_coords()
    pe = mms_pressure(x, y)
    ep = np.sqrt(np.sum((vp.p - (pe - pe.mean())) ** 2) * g.cell_area)
    return MMSRow(n, float(ev), float(ep), vp.iterations, vp.divergence_residual)


def mms_convergence(levels: Sequence[int], velocity_solver: str = "direct") -> list[MMSRow]:
    rows = [mms_error(n, velocity_solver) for n in levels]
    for a, b in zip(rows[:-1], rows[1:]):
        b.ratio = a.velocity_error / b.velocity_error
    return rows


@dataclass
class RefinementRow:
    n: int
    steps: int
    renormalization_defect: float
    mixed_area: float
    symmetric_difference: float
    weak_rho: float
    weak_nu: float
    weak_momentum: float


def refinement_level(scenario, n: int, *, weak_form: bool = True) -> tuple[RefinementRow, object]:
    sc = replace(scenario, nx=n, ny=n)
    pb = Problem.from_scenario(sc)
    traj = run_march(pb, diagnose=False)
    renorm = renormalization_defect(traj, pb.data.rho_b).total
    phases = sc.phases
    mixed = symdiff = float("nan")
    if phases is not None:
        m = mixing_measure(pb.grid, traj.states[-1], phases, time=traj.times[-1])
        mixed, symdiff = m.mixed, m.symmetric_difference
    wr = wn = wm = float("nan")
    if weak_form:
        wf = weak_form_residual(traj, pb)
        wr, wn, wm = max(wf.rho.values()), max(wf.nu.values()), wf.momentum
    return RefinementRow(n, len(traj.times) - 1, renorm, mixed, symdiff, wr, wn, wm), traj


def refinement_study(scenario, levels: Sequence[int], weak_form: bool = True) -> list[RefinementRow]:
    """March the scenario on each n x n level to the same final time."""
    return [refinement_level(scenario, n, weak_form=weak_form)[0] for n in levels]


def ratios(values: Sequence[float]) -> list[float]:
    v = list(values)
    return [a / b if b != 0 else float("inf") for a, b in zip(v[:-1], v[1:])]


def march_refinement_error(scenario, n: int, times: Optional[Sequence[float]] = None) -> float:
    """space-time L2 distance between the n-level march and the 2n-level march coarsened onto it."""
    coarse = run_march(Problem.from_scenario(replace(scenario, nx=n, ny=n)), diagnose=False)
    fine = run_march(Problem.from_scenario(replace(scenario, nx=2 * n, ny=2 * n)), diagnose=False)
    times = coarse.times if times is None else times
    rc, nc = interpolate_in_time(coarse, times)
    rf, nf = interpolate_in_time(fine, times)
    return space_time_distance(coarse.grid, times, rc, nc, coarsen(rf), coarsen(nf))
