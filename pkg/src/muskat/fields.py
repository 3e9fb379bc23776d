"""Field containers for the mixture, velocity/pressure and boundary data."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DataError, PreconditionError
from .grid import StaggeredGrid, VectorSampler

# s(t, x, y) -> array broadcastable to x
ScalarSampler = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def sample(fn: ScalarSampler, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate a scalar sampler and broadcast the result to ``x.shape``."""
    out = np.asarray(fn(t, x, y), dtype=float)
    return np.array(np.broadcast_to(out, np.shape(x)), dtype=float)


def sample_vector(fn: VectorSampler, t: float, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fx, fy = fn(t, x, y)
    shape = np.shape(x)
    return (np.array(np.broadcast_to(np.asarray(fx, dtype=float), shape)),
            np.array(np.broadcast_to(np.asarray(fy, dtype=float), shape)))


@dataclass(frozen=True)
class Bounds:
    """Admissible intervals [rho_min, rho_max] x [nu_min, nu_max]."""

    rho_min: float
    rho_max: float
    nu_min: float
    nu_max: float

    def __post_init__(self):
        if not (0 < self.rho_min <= self.rho_max):
            raise DataError("reg2", f"density bounds must satisfy 0 < min <= max, got [{self.rho_min}, {self.rho_max}]")
        if not (0 < self.nu_min <= self.nu_max):
            raise DataError("reg2", f"viscosity bounds must satisfy 0 < min <= max, got [{self.nu_min}, {self.nu_max}]")

    @property
    def mu_min(self) -> float:
        return self.rho_min * self.nu_min

    @property
    def mu_max(self) -> float:
        return self.rho_max * self.nu_max


@dataclass
class MixtureState:
    rho: np.ndarray
    nu: np.ndarray
    bounds: Bounds

    def copy(self) -> "MixtureState":
        return MixtureState(self.rho.copy(), self.nu.copy(), self.bounds)

    def in_admissible_set(self, tau_mp: float = 0.0) -> bool:
        b = self.bounds
        return bool(
            self.rho.min() >= b.rho_min - tau_mp and self.rho.max() <= b.rho_max + tau_mp
            and self.nu.min() >= b.nu_min - tau_mp and self.nu.max() <= b.nu_max + tau_mp
        )

    def require_admissible(self, tau_mp: float = 0.0) -> None:
        if not self.in_admissible_set(tau_mp):
            raise PreconditionError(
                f"state outside admissible set: rho in [{self.rho.min():.6g}, {self.rho.max():.6g}], "
                f"nu in [{self.nu.min():.6g}, {self.nu.max():.6g}], bounds {self.bounds}"
            )


@dataclass
class BoundaryVelocity:
    """Dirichlet velocity data on the MAC boundary.

    Normal components live on the boundary faces; tangential components are
    wall values at the boundary nodes, needed by the shear strain stencil.
    """

    u_left: np.ndarray    # (ny,)
    u_right: np.ndarray   # (ny,)
    v_bottom: np.ndarray  # (nx,)
    v_top: np.ndarray     # (nx,)
    u_wall: np.ndarray    # (nx+1, 2): u at bottom / top wall nodes
    v_wall: np.ndarray    # (2, ny+1): v at left / right wall nodes

    @classmethod
    def zeros(cls, grid: StaggeredGrid) -> "BoundaryVelocity":
        nx, ny = grid.nx, grid.ny
        return cls(np.zeros(ny), np.zeros(ny), np.zeros(nx), np.zeros(nx),
                   np.zeros((nx + 1, 2)), np.zeros((2, ny + 1)))

    def _arrays(self):
        return (self.u_left, self.u_right, self.v_bottom, self.v_top, self.u_wall, self.v_wall)

    def __add__(self, other: "BoundaryVelocity") -> "BoundaryVelocity":
        return BoundaryVelocity(*(a + b for a, b in zip(self._arrays(), other._arrays())))

    def scaled(self, alpha: float) -> "BoundaryVelocity":
        return BoundaryVelocity(*(alpha * a for a in self._arrays()))

    def normal_velocity(self) -> np.ndarray:
        """b.n ordered like ``grid.boundary_faces`` (left, right, bottom, top)."""
        return np.concatenate([-self.u_left, self.u_right, -self.v_bottom, self.v_top])

    def net_flux(self, grid: StaggeredGrid) -> float:
        """Discrete boundary integral of b.n; zero for compatible data."""
        return float((np.sum(self.u_right) - np.sum(self.u_left)) * grid.hy
                     + (np.sum(self.v_top) - np.sum(self.v_bottom)) * grid.hx)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(a), initial=0.0) for a in self._arrays()))

    def apply_to(self, u: np.ndarray, v: np.ndarray) -> None:
        u[0, :] = self.u_left
        u[-1, :] = self.u_right
        v[:, 0] = self.v_bottom
        v[:, -1] = self.v_top


def sample_boundary_velocity(grid: StaggeredGrid, b: VectorSampler, t: float) -> BoundaryVelocity:
    """Sample ``b`` at boundary face midpoints and wall nodes."""
    x0, y0 = grid.origin
    x1, y1 = x0 + grid.extent[0], y0 + grid.extent[1]
    yc, xc = grid.y_centers, grid.x_centers
    xn, yn = grid.x_nodes, grid.y_nodes
    u_left, _ = sample_vector(b, t, np.full_like(yc, x0), yc)
    u_right, _ = sample_vector(b, t, np.full_like(yc, x1), yc)
    _, v_bottom = sample_vector(b, t, xc, np.full_like(xc, y0))
    _, v_top = sample_vector(b, t, xc, np.full_like(xc, y1))
    ub, _ = sample_vector(b, t, xn, np.full_like(xn, y0))
    ut, _ = sample_vector(b, t, xn, np.full_like(xn, y1))
    _, vl = sample_vector(b, t, np.full_like(yn, x0), yn)
    _, vr = sample_vector(b, t, np.full_like(yn, x1), yn)
    return BoundaryVelocity(u_left, u_right, v_bottom, v_top,
                            np.stack([ub, ut], axis=1), np.stack([vl, vr], axis=0))


@dataclass
class VelocityPressure:
    """Face velocities, wall tangential data and zero-mean cell pressure."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    u_wall: np.ndarray
    v_wall: np.ndarray
    divergence_residual: float = float("nan")
    momentum_residual: float = float("nan")
    iterations: int = 0
    residual_history: list = field(default_factory=list, repr=False)

    @property
    def boundary(self) -> BoundaryVelocity:
        return BoundaryVelocity(self.u[0].copy(), self.u[-1].copy(), self.v[:, 0].copy(),
                                self.v[:, -1].copy(), self.u_wall.copy(), self.v_wall.copy())

    def with_fields(self, **kw) -> "VelocityPressure":
        return replace(self, **kw)

    def max_speed(self) -> tuple[float, float]:
        return float(np.max(np.abs(self.u), initial=0.0)), float(np.max(np.abs(self.v), initial=0.0))


def velocity_from_function(grid: StaggeredGrid, fn: VectorSampler, t: float = 0.0,
                           p: Optional[np.ndarray] = None) -> VelocityPressure:
    """Sample a continuous velocity field onto the MAC faces (and walls)."""
    xu, yu = grid.xface_coords()
    xv, yv = grid.yface_coords()
    u, _ = sample_vector(fn, t, xu, yu)
    _, v = sample_vector(fn, t, xv, yv)
    bv = sample_boundary_velocity(grid, fn, t)
    if p is None:
        p = np.zeros((grid.nx, grid.ny))
    return VelocityPressure(u, v, p, bv.u_wall, bv.v_wall)


@dataclass
class BoundaryData:
    """Data samplers of the initial-boundary value problem.

    ``b`` is the boundary velocity, ``rho_b``/``nu_b`` the in-flux values
    (only read where b.n < 0) and ``g`` the body force per unit mass.
    """

    b: VectorSampler
    rho_b: ScalarSampler
    nu_b: ScalarSampler
    g: VectorSampler

    def velocity(self, grid: StaggeredGrid, t: float) -> BoundaryVelocity:
        return sample_boundary_velocity(grid, self.b, t)

    def compatibility_defect(self, grid: StaggeredGrid, t: float) -> float:
        return self.velocity(grid, t).net_flux(grid)


def default_tau_comp(grid: StaggeredGrid, bmax: float) -> float:
    return 1e-10 * grid.perimeter * max(bmax, 1.0)


def check_compatibility(grid: StaggeredGrid, bv: BoundaryVelocity, tau_comp: float | None = None) -> float:
    """Raise :class:`DataError` when the boundary flux does not balance."""
    defect = bv.net_flux(grid)
    if tau_comp is None:
        tau_comp = default_tau_comp(grid, bv.max_abs())
    if abs(defect) > tau_comp:
        raise DataError("compatibility",
                        f"boundary velocity has nonzero net flux: {defect:.6g} exceeds {tau_comp:.3g}",
                        magnitude=abs(defect))
    return defect


@dataclass
class DragModel:
    """Scalar drag coefficient h(t, x, r) with r = rho * nu.

    The default rule is ``h = h0(x) * r**m``; ``m = 1`` with ``h0 = 1/k``
    gives the permeability law h = mu / k.  ``form`` overrides the rule and
    must respect ``0 <= h <= h0 * r**m``.
    """

    h0: ScalarSampler
    m: float = 1.0
    form: Optional[Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.m < 0:
            raise DataError("reg3", f"drag exponent m must be >= 0, got {self.m}")

    def growth_bound(self, t: float, x: np.ndarray, y: np.ndarray, r: np.ndarray) -> np.ndarray:
        return sample(self.h0, t, x, y) * np.power(r, self.m)

    def evaluate(self, t: float, x: np.ndarray, y: np.ndarray, r: np.ndarray) -> np.ndarray:
        if self.form is not None:
            return np.array(np.broadcast_to(self.form(t, x, y, r), np.shape(x)), dtype=float)
        return self.growth_bound(t, x, y, r)


def mixture_viscosity(state: MixtureState) -> np.ndarray:
    """Dynamic viscosity mu = rho * nu at cell centres."""
    return state.rho * state.nu


def l2_norm(f: np.ndarray, grid: StaggeredGrid) -> float:
    return float(np.sqrt(np.sum(f * f) * grid.cell_area))


def linf_norm(f: np.ndarray) -> float:
    return float(np.max(np.abs(f), initial=0.0))


def h1_seminorm(vp: VelocityPressure, grid: StaggeredGrid) -> float:
    """sqrt(sum |Dv|^2 * area) with the cell-centred symmetric gradient."""
    from .brinkman import symmetric_gradient

    D = symmetric_gradient(grid, vp)
    return float(np.sqrt(np.sum(D * D) * grid.cell_area))
