"""Staggered (MAC) grid over an axis-aligned rectangle.

Layout, with ``i`` running in x and ``j`` in y::

    cell  (i, j)      centre (x0 + (i+1/2) hx, y0 + (j+1/2) hy)   shape (nx,   ny)
    xface (i, j)      centre (x0 + i hx,       y0 + (j+1/2) hy)   shape (nx+1, ny)
    yface (i, j)      centre (x0 + (i+1/2) hx, y0 + j hy)         shape (nx,   ny+1)
    node  (i, j)      corner (x0 + i hx,       y0 + j hy)         shape (nx+1, ny+1)

Global face ids enumerate x-faces first (C order), then y-faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

# b(t, x, y) -> (bx, by); arrays broadcast against x, y
VectorSampler = Callable[[float, np.ndarray, np.ndarray], tuple]

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class BoundaryFace:
    face_id: int
    side: str
    index: int  # j on left/right walls, i on bottom/top walls
    normal: tuple[float, float]
    length: float
    midpoint: tuple[float, float]


@dataclass(frozen=True, eq=False)
class StaggeredGrid:
    origin: tuple[float, float]
    extent: tuple[float, float]
    nx: int
    ny: int
    hx: float = field(init=False)
    hy: float = field(init=False)
    boundary_faces: tuple[BoundaryFace, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hx", self.extent[0] / self.nx)
        object.__setattr__(self, "hy", self.extent[1] / self.ny)
        object.__setattr__(self, "boundary_faces", tuple(self._enumerate_boundary()))

    # counts -----------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_faces(self) -> int:
        return self.n_xfaces + self.n_yfaces

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.extent[0] * self.extent[1]

    @property
    def perimeter(self) -> float:
        return 2.0 * (self.extent[0] + self.extent[1])

    # coordinates ------------------------------------------------------
    @property
    def x_nodes(self) -> np.ndarray:
        return self.origin[0] + self.hx * np.arange(self.nx + 1)

    @property
    def y_nodes(self) -> np.ndarray:
        return self.origin[1] + self.hy * np.arange(self.ny + 1)

    @property
    def x_centers(self) -> np.ndarray:
        return self.origin[0] + self.hx * (np.arange(self.nx) + 0.5)

    @property
    def y_centers(self) -> np.ndarray:
        return self.origin[1] + self.hy * (np.arange(self.ny) + 0.5)

    def cell_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_centers, self.y_centers, indexing="ij")

    def xface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_nodes, self.y_centers, indexing="ij")

    def yface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_centers, self.y_nodes, indexing="ij")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")

    # index maps -------------------------------------------------------
    def cell_id(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def xface_id(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def yface_id(self, i, j):
        return self.n_xfaces + np.asarray(i) * (self.ny + 1) + np.asarray(j)

    def is_boundary_face(self, face_id: int) -> bool:
        if face_id < self.n_xfaces:
            i = face_id // self.ny
            return i == 0 or i == self.nx
        j = (face_id - self.n_xfaces) % (self.ny + 1)
        return j == 0 or j == self.ny

    def _enumerate_boundary(self):
        x0, y0 = self.origin
        x1, y1 = x0 + self.extent[0], y0 + self.extent[1]
        yc, xc = self.y_centers, self.x_centers
        for j in range(self.ny):
            yield BoundaryFace(int(self.xface_id(0, j)), "left", j, (-1.0, 0.0), self.hy, (x0, float(yc[j])))
        for j in range(self.ny):
            yield BoundaryFace(int(self.xface_id(self.nx, j)), "right", j, (1.0, 0.0), self.hy, (x1, float(yc[j])))
        for i in range(self.nx):
            yield BoundaryFace(int(self.yface_id(i, 0)), "bottom", i, (0.0, -1.0), self.hx, (float(xc[i]), y0))
        for i in range(self.nx):
            yield BoundaryFace(int(self.yface_id(i, self.ny)), "top", i, (0.0, 1.0), self.hx, (float(xc[i]), y1))

    def boundary_arrays(self) -> dict[str, np.ndarray]:
        """Boundary faces as parallel arrays (ids, normals, lengths, midpoints)."""
        return self._boundary_arrays

    @cached_property
    def _boundary_arrays(self) -> dict[str, np.ndarray]:
        bf = self.boundary_faces
        return {
            "face_id": np.array([f.face_id for f in bf], dtype=np.int64),
            "normal": np.array([f.normal for f in bf]),
            "length": np.array([f.length for f in bf]),
            "midpoint": np.array([f.midpoint for f in bf]),
        }

    def refine(self, factor: int = 2) -> "StaggeredGrid":
        return build_grid(self.origin, self.extent, self.nx * factor, self.ny * factor)


def build_grid(origin, extent, nx: int, ny: int) -> StaggeredGrid:
    """Validate inputs and construct a :class:`StaggeredGrid`."""
    origin = (float(origin[0]), float(origin[1]))
    extent = (float(extent[0]), float(extent[1]))
    if not all(np.isfinite(origin)):
        raise ConfigurationError("origin", f"must be finite, got {origin}")
    if not (extent[0] > 0 and extent[1] > 0):
        raise ConfigurationError("extent", f"components must be positive, got {extent}")
    for name, n in (("nx", nx), ("ny", ny)):
        if int(n) != n or n < 2:
            raise ConfigurationError(name, f"must be an integer >= 2, got {n}")
    return StaggeredGrid(origin, extent, int(nx), int(ny))


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """Sign classification of b.n over the boundary faces at one time.

    Arrays are aligned with ``grid.boundary_faces``.
    """

    time: float
    face_ids: np.ndarray
    bn: np.ndarray
    lengths: np.ndarray
    tau_n: float
    inflow: frozenset[int]
    outflow: frozenset[int]
    tangential: frozenset[int]

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.bn) * self.lengths

    @property
    def inflow_mask(self) -> np.ndarray:
        return self.bn < -self.tau_n

    @property
    def outflow_mask(self) -> np.ndarray:
        return self.bn > self.tau_n

    @property
    def tangential_mask(self) -> np.ndarray:
        return np.abs(self.bn) <= self.tau_n


def sample_normal_velocity(grid: StaggeredGrid, b: VectorSampler, t: float) -> np.ndarray:
    """b.n at every boundary face midpoint, ordered like ``grid.boundary_faces``."""
    arr = grid.boundary_arrays()
    mx, my = arr["midpoint"][:, 0], arr["midpoint"][:, 1]
    bx, by = b(t, mx, my)
    bx = np.broadcast_to(np.asarray(bx, dtype=float), mx.shape)
    by = np.broadcast_to(np.asarray(by, dtype=float), my.shape)
    return bx * arr["normal"][:, 0] + by * arr["normal"][:, 1]


def classify_boundary(grid: StaggeredGrid, b: VectorSampler, t: float, tau_n: float | None = None) -> BoundaryPartition:
    """Split boundary faces into in-flux, out-flux and tangential zones.

    The dead band ``tau_n`` defaults to ``1e-12 * max|b|`` over the boundary
    midpoints; faces with ``|b.n| <= tau_n`` are tangential.
    """
    arr = grid.boundary_arrays()
    mx, my = arr["midpoint"][:, 0], arr["midpoint"][:, 1]
    bx, by = b(t, mx, my)
    bx = np.broadcast_to(np.asarray(bx, dtype=float), mx.shape)
    by = np.broadcast_to(np.asarray(by, dtype=float), my.shape)
    bn = bx * arr["normal"][:, 0] + by * arr["normal"][:, 1]
    return partition_from_normal_velocity(grid, bn, t, tau_n, bmax=float(np.max(np.hypot(bx, by), initial=0.0)))


def partition_from_normal_velocity(grid: StaggeredGrid, bn: np.ndarray, t: float,
                                   tau_n: float | None = None, bmax: float | None = None) -> BoundaryPartition:
    arr = grid.boundary_arrays()
    bn = np.asarray(bn, dtype=float)
    if tau_n is None:
        if bmax is None:
            bmax = float(np.max(np.abs(bn), initial=0.0))
        tau_n = 1e-12 * bmax
    ids = arr["face_id"]
    inflow = frozenset(int(k) for k in ids[bn < -tau_n])
    outflow = frozenset(int(k) for k in ids[bn > tau_n])
    tangential = frozenset(int(k) for k in ids[np.abs(bn) <= tau_n])
    return BoundaryPartition(float(t), ids, bn, arr["length"], float(tau_n), inflow, outflow, tangential)


# discrete operators ---------------------------------------------------

def discrete_divergence(grid: StaggeredGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cell divergence of a face field, exact for the MAC stencil."""
    return (u[1:, :] - u[:-1, :]) / grid.hx + (v[:, 1:] - v[:, :-1]) / grid.hy


def discrete_gradient(grid: StaggeredGrid, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Face gradient of a cell field; boundary faces get zero (ghost p copies the interior)."""
    gx = np.zeros((grid.nx + 1, grid.ny))
    gy = np.zeros((grid.nx, grid.ny + 1))
    gx[1:-1, :] = (p[1:, :] - p[:-1, :]) / grid.hx
    gy[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / grid.hy
    return gx, gy


def divergence_matrix(grid: StaggeredGrid) -> sp.csr_matrix:
    """Assembled divergence, shape (n_cells, n_faces)."""
    nx, ny = grid.nx, grid.ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    c = grid.cell_id(I, J).ravel()
    rows = np.concatenate([c, c, c, c])
    cols = np.concatenate([
        grid.xface_id(I + 1, J).ravel(), grid.xface_id(I, J).ravel(),
        grid.yface_id(I, J + 1).ravel(), grid.yface_id(I, J).ravel(),
    ])
    n = c.size
    vals = np.concatenate([
        np.full(n, 1.0 / grid.hx), np.full(n, -1.0 / grid.hx),
        np.full(n, 1.0 / grid.hy), np.full(n, -1.0 / grid.hy),
    ])
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_faces))


def gradient_matrix(grid: StaggeredGrid) -> sp.csr_matrix:
    """Assembled gradient, shape (n_faces, n_cells); boundary rows are empty."""
    nx, ny = grid.nx, grid.ny
    rows, cols, vals = [], [], []
    I, J = np.meshgrid(np.arange(1, nx), np.arange(ny), indexing="ij")
    f = grid.xface_id(I, J).ravel()
    rows += [f, f]
    cols += [grid.cell_id(I, J).ravel(), grid.cell_id(I - 1, J).ravel()]
    vals += [np.full(f.size, 1.0 / grid.hx), np.full(f.size, -1.0 / grid.hx)]
    I, J = np.meshgrid(np.arange(nx), np.arange(1, ny), indexing="ij")
    f = grid.yface_id(I, J).ravel()
    rows += [f, f]
    cols += [grid.cell_id(I, J).ravel(), grid.cell_id(I, J - 1).ravel()]
    vals += [np.full(f.size, 1.0 / grid.hy), np.full(f.size, -1.0 / grid.hy)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.n_faces, grid.n_cells))


def interior_face_mask(grid: StaggeredGrid) -> np.ndarray:
    mask = np.ones(grid.n_faces, dtype=bool)
    mask[grid.boundary_arrays()["face_id"]] = False
    return mask


def flatten_faces(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.concatenate([u.ravel(), v.ravel()])


def split_faces(grid: StaggeredGrid, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = w[: grid.n_xfaces].reshape(grid.nx + 1, grid.ny)
    v = w[grid.n_xfaces: grid.n_faces].reshape(grid.nx, grid.ny + 1)
    return u, v
