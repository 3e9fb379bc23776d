"""Variable-viscosity Stokes-Brinkman saddle-point system on the MAC grid.

Continuous target, with Dirichlet velocity data b on the whole boundary::

    h v - div(mu D v) + grad p = f,   div v = 0,   v = b on the boundary.

The operator is written in the symmetric-gradient form with ``mu D v``
(not ``2 mu D v``), so the weak form reads

    sum(mu Dv:Dpsi + h v.psi) - sum(p div psi) = sum(f.psi).

The Cauchy stress of a single phase carries the usual factor two,
``T = -p I + 2 mu Dv``; see :func:`muskat.diagnostics.stress_field`.

Discretisation: the bilinear form is assembled from strain operators. D11
and D22 live at cell centres, D12 at grid nodes (one-sided half-cell
differences against the wall data on the boundary). The momentum block is
therefore ``A = S^T M_mu S + M_h`` and symmetric by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, CoercivityError, SolverError
from .fields import (BoundaryVelocity, VelocityPressure, check_compatibility,
                     sample_boundary_velocity, sample_vector)
from .grid import StaggeredGrid, divergence_matrix

TAU_SOLVE = 1e-9
TAU_DIV = 1e-8


# ---------------------------------------------------------------- layout

def _layout(grid: StaggeredGrid):
    nx, ny = grid.nx, grid.ny
    n_f = grid.n_faces
    n_uw = 2 * (nx + 1)
    n_vw = 2 * (ny + 1)
    return n_f, n_uw, n_vw, n_f + n_uw + n_vw


def pack_velocity(grid: StaggeredGrid, u, v, u_wall, v_wall) -> np.ndarray:
    """Stack faces and wall tangential values into one vector."""
    return np.concatenate([np.ravel(u), np.ravel(v), np.ravel(u_wall), np.ravel(v_wall)])


def unpack_velocity(grid: StaggeredGrid, w: np.ndarray):
    nx, ny = grid.nx, grid.ny
    n_f, n_uw, _, _ = _layout(grid)
    u = w[: grid.n_xfaces].reshape(nx + 1, ny)
    v = w[grid.n_xfaces: n_f].reshape(nx, ny + 1)
    u_wall = w[n_f: n_f + n_uw].reshape(nx + 1, 2)
    v_wall = w[n_f + n_uw:].reshape(2, ny + 1)
    return u, v, u_wall, v_wall


def pack_boundary(grid: StaggeredGrid, bv: BoundaryVelocity) -> np.ndarray:
    u = np.zeros((grid.nx + 1, grid.ny))
    v = np.zeros((grid.nx, grid.ny + 1))
    bv.apply_to(u, v)
    return pack_velocity(grid, u, v, bv.u_wall, bv.v_wall)


@dataclass(frozen=True, eq=False)
class StrainOperators:
    """Sparse maps from the packed velocity vector to strain components."""

    Sxx: sp.csr_matrix   # cells
    Syy: sp.csr_matrix   # cells
    Sxy: sp.csr_matrix   # nodes, already the symmetric 1/2 (du/dy + dv/dx)
    node_weight: np.ndarray
    face_weight: np.ndarray
    unknown: np.ndarray
    known: np.ndarray
    Bfull: sp.csr_matrix  # -area * div, cells x packed vector


@lru_cache(maxsize=32)
def strain_operators(grid: StaggeredGrid) -> StrainOperators:
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    n_f, n_uw, n_vw, nw = _layout(grid)

    def uid(i, j):
        return i * ny + j

    def vid(i, j):
        return grid.n_xfaces + i * (ny + 1) + j

    def uwid(i, k):
        return n_f + i * 2 + k

    def vwid(k, j):
        return n_f + n_uw + k * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    c = (I * ny + J).ravel()
    n = c.size
    Sxx = sp.csr_matrix((np.concatenate([np.full(n, 1 / hx), np.full(n, -1 / hx)]),
                         (np.concatenate([c, c]), np.concatenate([uid(I + 1, J).ravel(), uid(I, J).ravel()]))),
                        shape=(grid.n_cells, nw))
    Syy = sp.csr_matrix((np.concatenate([np.full(n, 1 / hy), np.full(n, -1 / hy)]),
                         (np.concatenate([c, c]), np.concatenate([vid(I, J + 1).ravel(), vid(I, J).ravel()]))),
                        shape=(grid.n_cells, nw))

    rows, cols, vals = [], [], []

    def add(r, cidx, val):
        rows.append(np.ravel(r))
        cols.append(np.ravel(cidx))
        vals.append(np.broadcast_to(val, np.shape(np.ravel(r))).astype(float))

    # du/dy at nodes
    i = np.arange(nx + 1)
    for j in range(ny + 1):
        node = i * (ny + 1) + j
        if j == 0:
            add(node, uid(i, 0), 0.5 * 2 / hy)
            add(node, uwid(i, 0), -0.5 * 2 / hy)
        elif j == ny:
            add(node, uwid(i, 1), 0.5 * 2 / hy)
            add(node, uid(i, ny - 1), -0.5 * 2 / hy)
        else:
            add(node, uid(i, j), 0.5 / hy)
            add(node, uid(i, j - 1), -0.5 / hy)
    # dv/dx at nodes
    j = np.arange(ny + 1)
    for ii in range(nx + 1):
        node = ii * (ny + 1) + j
        if ii == 0:
            add(node, vid(0, j), 0.5 * 2 / hx)
            add(node, vwid(0, j), -0.5 * 2 / hx)
        elif ii == nx:
            add(node, vwid(1, j), 0.5 * 2 / hx)
            add(node, vid(nx - 1, j), -0.5 * 2 / hx)
        else:
            add(node, vid(ii, j), 0.5 / hx)
            add(node, vid(ii - 1, j), -0.5 / hx)
    Sxy = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=((nx + 1) * (ny + 1), nw))

    wx = np.where((np.arange(nx + 1) == 0) | (np.arange(nx + 1) == nx), 0.5, 1.0)
    wy = np.where((np.arange(ny + 1) == 0) | (np.arange(ny + 1) == ny), 0.5, 1.0)
    node_weight = (hx * hy * np.outer(wx, wy)).ravel()

    fu = np.full((nx + 1, ny), hx * hy)
    fu[0, :] *= 0.5
    fu[-1, :] *= 0.5
    fv = np.full((nx, ny + 1), hx * hy)
    fv[:, 0] *= 0.5
    fv[:, -1] *= 0.5
    face_weight = np.concatenate([fu.ravel(), fv.ravel()])

    interior = np.zeros(nw, dtype=bool)
    ui = np.zeros((nx + 1, ny), dtype=bool)
    ui[1:-1, :] = True
    vi = np.zeros((nx, ny + 1), dtype=bool)
    vi[:, 1:-1] = True
    interior[:n_f] = np.concatenate([ui.ravel(), vi.ravel()])
    unknown = np.flatnonzero(interior)
    known = np.flatnonzero(~interior)

    Bfull = -grid.cell_area * divergence_matrix(grid)
    Bfull = sp.hstack([Bfull, sp.csr_matrix((grid.n_cells, n_uw + n_vw))]).tocsr()
    return StrainOperators(Sxx, Syy, Sxy, node_weight, face_weight, unknown, known, Bfull)


# ------------------------------------------------------------ averaging

def cell_to_xfaces(f: np.ndarray, harmonic: bool = False) -> np.ndarray:
    g = 1.0 / f if harmonic else f
    out = np.empty((f.shape[0] + 1, f.shape[1]))
    out[1:-1] = 0.5 * (g[1:] + g[:-1])
    out[0] = g[0]
    out[-1] = g[-1]
    return 1.0 / out if harmonic else out


def cell_to_yfaces(f: np.ndarray, harmonic: bool = False) -> np.ndarray:
    return cell_to_xfaces(f.T, harmonic).T


def cell_to_nodes(f: np.ndarray, harmonic: bool = False) -> np.ndarray:
    g = 1.0 / f if harmonic else f
    nx, ny = f.shape
    pad = np.zeros((nx + 2, ny + 2))
    cnt = np.zeros((nx + 2, ny + 2))
    pad[1:-1, 1:-1] = g
    cnt[1:-1, 1:-1] = 1.0
    s = pad[:-1, :-1] + pad[1:, :-1] + pad[:-1, 1:] + pad[1:, 1:]
    c = cnt[:-1, :-1] + cnt[1:, :-1] + cnt[:-1, 1:] + cnt[1:, 1:]
    avg = s / c
    return 1.0 / avg if harmonic else avg


def body_force(grid: StaggeredGrid, rho: np.ndarray, g, t: float) -> tuple[np.ndarray, np.ndarray]:
    """rho * g at the faces: rho averaged arithmetically, g sampled at face centres."""
    xu, yu = grid.xface_coords()
    xv, yv = grid.yface_coords()
    gx, _ = sample_vector(g, t, xu, yu)
    _, gy = sample_vector(g, t, xv, yv)
    return cell_to_xfaces(rho) * gx, cell_to_yfaces(rho) * gy


# ------------------------------------------------------------- assembly

@dataclass(eq=False)
class SaddleSystem:
    """Block system [[A, B^T], [B, 0]] [v; p] = [rhs_momentum; rhs_continuity].

    Rows are in integrated (control-volume) form; ``B = -area * div``
    restricted to interior faces, so that ``B^T p`` is the pressure gradient
    times the face control volume.
    """

    grid: StaggeredGrid
    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_momentum: np.ndarray
    rhs_continuity: np.ndarray
    K: sp.csr_matrix = field(repr=False)
    w_known: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    h_faces: np.ndarray = field(repr=False)
    tau_solve: float = TAU_SOLVE
    tau_div: float = TAU_DIV

    @property
    def ops(self) -> StrainOperators:
        return strain_operators(self.grid)

    def full_vector(self, v_unknown: np.ndarray) -> np.ndarray:
        w = np.empty(self.K.shape[0])
        w[self.ops.unknown] = v_unknown
        w[self.ops.known] = self.w_known
        return w

    def to_velocity_pressure(self, v_unknown: np.ndarray, p: np.ndarray) -> VelocityPressure:
        u, v, uw, vw = unpack_velocity(self.grid, self.full_vector(v_unknown))
        return VelocityPressure(u.copy(), v.copy(), p.reshape(self.grid.nx, self.grid.ny).copy(),
                                uw.copy(), vw.copy())


def assemble(grid: StaggeredGrid, mu: np.ndarray, h: np.ndarray, force, boundary,
             t: float = 0.0, *, harmonic: bool = False, tau_comp: float | None = None,
             tau_solve: float = TAU_SOLVE, tau_div: float = TAU_DIV) -> SaddleSystem:
    """Assemble the momentum/continuity blocks.

    Parameters
    ----------
    mu, h : cell fields
        Viscosity (must be positive) and drag coefficient (nonnegative).
    force : pair of face arrays, or a vector sampler ``f(t, x, y)``
        Body force per unit volume (``rho g``).
    boundary : BoundaryVelocity or vector sampler ``b(t, x, y)``
    harmonic : average mu harmonically to nodes instead of arithmetically.
    """
    mu = np.asarray(mu, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), mu.shape)
    if not np.all(np.isfinite(mu)) or mu.min() <= 0:
        raise CoercivityError(f"viscosity must be positive everywhere, min is {mu.min():.6g}")
    if np.any(h < 0):
        raise CoercivityError(f"drag must be nonnegative, min is {h.min():.6g}")
    if callable(boundary):
        boundary = sample_boundary_velocity(grid, boundary, t)
    check_compatibility(grid, boundary, tau_comp)
    if callable(force):
        xu, yu = grid.xface_coords()
        xv, yv = grid.yface_coords()
        fx, _ = sample_vector(force, t, xu, yu)
        _, fy = sample_vector(force, t, xv, yv)
    else:
        fx, fy = force

    ops = strain_operators(grid)
    mu_c = mu.ravel() * grid.cell_area
    mu_n = cell_to_nodes(mu, harmonic).ravel() * ops.node_weight
    h_f = np.concatenate([cell_to_xfaces(h).ravel(), cell_to_yfaces(h).ravel()])
    n_wall = ops.Sxx.shape[1] - grid.n_faces
    drag = np.concatenate([h_f * ops.face_weight, np.zeros(n_wall)])

    K = (ops.Sxx.T @ sp.diags(mu_c) @ ops.Sxx
         + ops.Syy.T @ sp.diags(mu_c) @ ops.Syy
         + 2.0 * (ops.Sxy.T @ sp.diags(mu_n) @ ops.Sxy)
         + sp.diags(drag)).tocsr()
    # exact symmetry regardless of summation order in the products
    K = (0.5 * (K + K.T)).tocsr()

    unk, kn = ops.unknown, ops.known
    w_known = pack_boundary(grid, boundary)[kn]
    A = K[unk][:, unk].tocsr()
    Kik = K[unk][:, kn]
    f_full = np.concatenate([np.ravel(fx), np.ravel(fy), np.zeros(n_wall)]) * np.concatenate(
        [ops.face_weight, np.zeros(n_wall)])
    rhs_m = f_full[unk] - Kik @ w_known
    B = ops.Bfull[:, unk].tocsr()
    rhs_c = -(ops.Bfull[:, kn] @ w_known)
    return SaddleSystem(grid, A, B, rhs_m, rhs_c, K, w_known, mu, h_f, tau_solve, tau_div)


# -------------------------------------------------------------- solvers

def _dot(a: np.ndarray, b: np.ndarray) -> float:
    # fixed pairwise reduction; BLAS dot may reorder with threads
    return float(np.sum(a * b))


def pcg(matvec: Callable, b: np.ndarray, precond: Optional[Callable] = None, *, rtol: float = 1e-10,
        atol: float = 0.0, max_iter: int = 1000, project: Optional[Callable] = None,
        stop: Optional[Callable] = None, x0: Optional[np.ndarray] = None):
    """Preconditioned conjugate gradients with optional nullspace projection.

    Returns ``(x, history, rayleigh_min_ratio)`` where ``history`` holds the
    residual 2-norms.  Raises :class:`SolverError` at the iteration cap.
    """
    proj = project or (lambda r: r)
    M = precond or (lambda r: r)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = proj(b - matvec(x) if x0 is not None else b.copy())
    bnorm = np.sqrt(_dot(proj(b), proj(b)))
    target = max(rtol * bnorm, atol)
    rnorm = np.sqrt(_dot(r, r))
    history = [rnorm]
    if rnorm <= target and (stop is None or stop(r)):
        return x, history, 1.0
    z = proj(M(r))
    d = z.copy()
    rz = _dot(r, z)
    first_rayleigh = None
    min_ratio = 1.0
    for _ in range(max_iter):
        q = matvec(d)
        dq = _dot(d, q)
        dd = _dot(d, d)
        rayleigh = dq / dd if dd > 0 else 0.0
        if first_rayleigh is None:
            first_rayleigh = rayleigh
        if first_rayleigh > 0:
            min_ratio = min(min_ratio, rayleigh / first_rayleigh)
        if dq <= 0 or (first_rayleigh > 0 and rayleigh < 1e-13 * first_rayleigh):
            raise AssemblyError(f"operator singular along a non-constant mode (Rayleigh quotient {rayleigh:.3e})")
        alpha = rz / dq
        x += alpha * d
        r -= alpha * q
        r = proj(r)
        rnorm = np.sqrt(_dot(r, r))
        history.append(rnorm)
        if rnorm <= target and (stop is None or stop(r)):
            return x, history, min_ratio
        z = proj(M(r))
        rz_new = _dot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(f"PCG did not converge in {max_iter} iterations (residual {rnorm:.3e}, target {target:.3e})",
                      history)


def _velocity_solver(A: sp.csr_matrix, kind: str):
    if kind == "direct":
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        return lu.solve
    if kind == "pcg":
        dinv = 1.0 / A.diagonal()

        def solve_pcg(rhs):
            x, _, _ = pcg(lambda z: A @ z, rhs, lambda r: dinv * r, rtol=1e-14, max_iter=20 * A.shape[0])
            return x
        return solve_pcg
    raise ValueError(f"unknown velocity solver {kind!r}")


def solve(system: SaddleSystem, *, velocity_solver: str = "direct", max_iter: int = 2000) -> VelocityPressure:
    """Schur-complement CG on the pressure, with an inner velocity solver.

    The pressure iteration is preconditioned by the viscosity-scaled mass
    matrix and projected onto zero-mean fields.  Stops when the continuity
    residual is below ``tau_solve`` relative and ``tau_div`` absolute (as a
    cell divergence).
    """
    grid = system.grid
    A, B = system.A, system.B
    Ainv = _velocity_solver(A, velocity_solver)
    area = grid.cell_area
    mu = system.mu.ravel()

    def project(q):
        return q - np.mean(q)

    def schur(q):
        return B @ Ainv(B.T @ q)

    def precond(r):
        return 0.5 * mu * r / area

    v0 = Ainv(system.rhs_momentum)
    s = B @ v0 - system.rhs_continuity
    tol_div = 0.01 * system.tau_div * area

    def stop(r):
        return float(np.max(np.abs(r), initial=0.0)) <= tol_div

    p, history, _ = pcg(schur, s, precond, rtol=0.01 * system.tau_solve, max_iter=max_iter,
                        project=project, stop=stop)
    p = project(p)
    v = Ainv(system.rhs_momentum - B.T @ p)
    out = system.to_velocity_pressure(v, p)
    res_m = A @ v + B.T @ p - system.rhs_momentum
    fnorm = max(np.linalg.norm(system.rhs_momentum), np.linalg.norm(A @ v), 1e-300)
    out.momentum_residual = float(np.linalg.norm(res_m) / fnorm)
    out.divergence_residual = float(np.max(np.abs(
        (out.u[1:] - out.u[:-1]) / grid.hx + (out.v[:, 1:] - out.v[:, :-1]) / grid.hy)))
    out.iterations = len(history) - 1
    out.residual_history = history
    if out.divergence_residual > system.tau_div:
        raise SolverError(f"divergence residual {out.divergence_residual:.3e} exceeds tau_div={system.tau_div:.1e}",
                          history)
    return out


def solve_dense(system: SaddleSystem) -> VelocityPressure:
    """Bordered dense LU of the same saddle system (zero-mean pressure constraint)."""
    A = system.A.toarray()
    B = system.B.toarray()
    nv, npr = A.shape[0], B.shape[0]
    K = np.zeros((nv + npr + 1, nv + npr + 1))
    K[:nv, :nv] = A
    K[:nv, nv:nv + npr] = B.T
    K[nv:nv + npr, :nv] = B
    K[nv:nv + npr, -1] = 1.0
    K[-1, nv:nv + npr] = 1.0
    rhs = np.concatenate([system.rhs_momentum, system.rhs_continuity, [0.0]])
    sol = np.linalg.solve(K, rhs)
    out = system.to_velocity_pressure(sol[:nv], sol[nv:nv + npr])
    out.divergence_residual = float(np.max(np.abs(
        (out.u[1:] - out.u[:-1]) / system.grid.hx + (out.v[:, 1:] - out.v[:, :-1]) / system.grid.hy)))
    return out


def solve_brinkman(grid: StaggeredGrid, mu, h, force, boundary, t: float = 0.0, *,
                   velocity_solver: str = "direct", **kw) -> VelocityPressure:
    return solve(assemble(grid, mu, h, force, boundary, t, **kw), velocity_solver=velocity_solver)


def lift_boundary(grid: StaggeredGrid, b, t: float = 0.0, **kw) -> VelocityPressure:
    """Canonical divergence-free extension of boundary data: unit-viscosity Stokes, no force."""
    zero_f = (np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))
    return solve_brinkman(grid, np.ones((grid.nx, grid.ny)), 0.0, zero_f, b, t, **kw)


# ------------------------------------------------------ strain utilities

def velocity_vector(grid: StaggeredGrid, vp: VelocityPressure) -> np.ndarray:
    return pack_velocity(grid, vp.u, vp.v, vp.u_wall, vp.v_wall)


def symmetric_gradient(grid: StaggeredGrid, vp: VelocityPressure) -> np.ndarray:
    """Cell-centred D v as an array of shape (nx, ny, 2, 2).

    Normal strains are the exact MAC differences; the shear strain is the
    mean of the four surrounding node values.
    """
    ops = strain_operators(grid)
    w = velocity_vector(grid, vp)
    nx, ny = grid.nx, grid.ny
    d11 = (ops.Sxx @ w).reshape(nx, ny)
    d22 = (ops.Syy @ w).reshape(nx, ny)
    dn = (ops.Sxy @ w).reshape(nx + 1, ny + 1)
    d12 = 0.25 * (dn[:-1, :-1] + dn[1:, :-1] + dn[:-1, 1:] + dn[1:, 1:])
    D = np.empty((nx, ny, 2, 2))
    D[..., 0, 0] = d11
    D[..., 1, 1] = d22
    D[..., 0, 1] = d12
    D[..., 1, 0] = d12
    return D


def strain_energy(grid: StaggeredGrid, mu: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                  harmonic: bool = False) -> float:
    """sum(mu Dw1:Dw2) with the same staggered quadrature as the assembly."""
    ops = strain_operators(grid)
    mu_c = mu.ravel() * grid.cell_area
    mu_n = cell_to_nodes(mu, harmonic).ravel() * ops.node_weight
    return (_dot(mu_c * (ops.Sxx @ w1), ops.Sxx @ w2) + _dot(mu_c * (ops.Syy @ w1), ops.Syy @ w2)
            + 2.0 * _dot(mu_n * (ops.Sxy @ w1), ops.Sxy @ w2))


def operator_norm_bound(grid: StaggeredGrid, mu: np.ndarray, h_cells: np.ndarray, harmonic: bool = False) -> float:
    """Largest absolute row sum of the strain-plus-drag operator (bounds its 2-norm)."""
    ops = strain_operators(grid)
    mu_c = mu.ravel() * grid.cell_area
    mu_n = cell_to_nodes(mu, harmonic).ravel() * ops.node_weight
    rows = np.zeros(ops.Sxx.shape[1])
    for S, m in ((ops.Sxx, mu_c), (ops.Syy, mu_c), (ops.Sxy, 2.0 * mu_n)):
        A = abs(S)
        rows += A.T @ (m * (A @ np.ones(A.shape[1])))
    h = np.broadcast_to(np.asarray(h_cells, dtype=float), mu.shape)
    h_f = np.concatenate([cell_to_xfaces(h).ravel(), cell_to_yfaces(h).ravel()])
    rows[: grid.n_faces] += np.abs(h_f) * ops.face_weight
    return float(rows.max())


def drag_energy(grid: StaggeredGrid, h_cells: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> float:
    ops = strain_operators(grid)
    h_f = np.concatenate([cell_to_xfaces(h_cells).ravel(), cell_to_yfaces(h_cells).ravel()])
    n_f = grid.n_faces
    return _dot(h_f * ops.face_weight * w1[:n_f], w2[:n_f])


def force_work(grid: StaggeredGrid, force, w: np.ndarray) -> float:
    ops = strain_operators(grid)
    f = np.concatenate([np.ravel(force[0]), np.ravel(force[1])])
    return _dot(f * ops.face_weight, w[: grid.n_faces])


def sample_force(grid: StaggeredGrid, fn, t: float = 0.0):
    xu, yu = grid.xface_coords()
    xv, yv = grid.yface_coords()
    fx, _ = sample_vector(fn, t, xu, yu)
    _, fy = sample_vector(fn, t, xv, yv)
    return fx, fy


def drag_cells(grid: StaggeredGrid, drag, t: float, r: np.ndarray) -> np.ndarray:
    x, y = grid.cell_coords()
    return drag.evaluate(t, x, y, r)
