"""Finite partitions of a phase-space window and their cell quadratures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on ``[-1, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Cartesian rectangles ``[q0,q1] x [p0,p1]`` or polar sectors
    ``[r0,r1] x [t0,t1]``.

    ``bounds`` has one row per cell.  Cartesian cells are ordered with the
    momentum index running fastest: cell ``i * shape[1] + j`` covers the
    ``i``-th position column and ``j``-th momentum row.  Polar cells are
    ordered the same way with radius as the slow index.
    """

    kind: str
    window: tuple[float, ...]
    shape: tuple[int, int]
    bounds: np.ndarray
    order: int = 6

    @property
    def n_cells(self) -> int:
        return self.bounds.shape[0]

    @property
    def centers(self) -> np.ndarray:
        """Representative point of each cell in (q, p) coordinates."""
        b = self.bounds
        c0 = 0.5 * (b[:, 0] + b[:, 1])
        c1 = 0.5 * (b[:, 2] + b[:, 3])
        if self.kind == "cartesian":
            return np.stack([c0, c1], axis=1)
        return np.stack([c0 * np.cos(c1), c0 * np.sin(c1)], axis=1)

    def areas(self) -> np.ndarray:
        b = self.bounds
        if self.kind == "cartesian":
            return (b[:, 1] - b[:, 0]) * (b[:, 3] - b[:, 2])
        return 0.5 * (b[:, 1] ** 2 - b[:, 0] ** 2) * (b[:, 3] - b[:, 2])

    def window_area(self) -> float:
        if self.kind == "cartesian":
            q0, q1, p0, p1 = self.window
            return (q1 - q0) * (p1 - p0)
        (r_max,) = self.window
        return math.pi * r_max**2

    def check_partition(self, rtol: float = 1e-12) -> bool:
        return abs(self.areas().sum() - self.window_area()) <= rtol * self.window_area()

    def cell_nodes(self, index: int, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss-Legendre nodes (as (q, p) points) and weights of one
        cell; polar weights include the Jacobian ``r``."""
        return cell_quadrature(self.kind, self.bounds[index], order or self.order)

    def with_order(self, order: int) -> "PhaseSpaceGrid":
        return PhaseSpaceGrid(self.kind, self.window, self.shape, self.bounds, order)

    def axis_edges(self, axis: str) -> np.ndarray:
        """Edges along the position (``"x"``) or momentum (``"y"``) axis."""
        if self.kind != "cartesian":
            raise ValueError("axis edges are defined for cartesian grids")
        nx, ny = self.shape
        b = self.bounds.reshape(nx, ny, 4)
        if axis == "x":
            return np.concatenate([b[:, 0, 0], [b[-1, 0, 1]]])
        return np.concatenate([b[0, :, 2], [b[0, -1, 3]]])


def cell_quadrature(kind: str, bounds, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre(order)
    a0, a1, b0, b1 = bounds
    ha, hb = 0.5 * (a1 - a0), 0.5 * (b1 - b0)
    u = a0 + ha * (x + 1.0)
    v = b0 + hb * (x + 1.0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(w * ha, w * hb)
    uu, vv, ww = uu.ravel(), vv.ravel(), ww.ravel()
    if kind == "cartesian":
        return np.stack([uu, vv], axis=1), ww
    return np.stack([uu * np.cos(vv), uu * np.sin(vv)], axis=1), ww * uu


def cartesian_grid(
    qmin: float, qmax: float, pmin: float, pmax: float, nx: int, ny: int, order: int = 6
) -> PhaseSpaceGrid:
    if nx < 1 or ny < 1:
        raise ValueError("grid needs at least one cell per axis")
    if qmax < qmin or pmax < pmin:
        raise ValueError("window bounds are inverted")
    qe = np.linspace(qmin, qmax, nx + 1)
    pe = np.linspace(pmin, pmax, ny + 1)
    qi, pj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    qi, pj = qi.ravel(), pj.ravel()
    bounds = np.stack([qe[qi], qe[qi + 1], pe[pj], pe[pj + 1]], axis=1)
    return PhaseSpaceGrid("cartesian", (qmin, qmax, pmin, pmax), (nx, ny), bounds, order)


def polar_grid(
    r_max: float, n_r: int, n_theta: int, order: int = 6, theta0: float = 0.0
) -> PhaseSpaceGrid:
    """Annular sectors of the disc of radius ``r_max``.

    Sector edges are ``theta0 + 2 pi j / n_theta``; radius is the slow index.
    """
    if n_r < 1 or n_theta < 1 or r_max <= 0:
        raise ValueError("polar grid needs positive radius and cell counts")
    re = np.linspace(0.0, r_max, n_r + 1)
    te = theta0 + TWO_PI * np.arange(n_theta + 1) / n_theta
    ri, tj = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    ri, tj = ri.ravel(), tj.ravel()
    bounds = np.stack([re[ri], re[ri + 1], te[tj], te[tj + 1]], axis=1)
    return PhaseSpaceGrid("polar", (r_max,), (n_r, n_theta), bounds, order)


def parse_grid_flag(text: str, order: int = 6) -> PhaseSpaceGrid:
    """Parse ``qmin,qmax,pmin,pmax,nx,ny``."""
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != 6:
        raise ValueError("grid flag must be qmin,qmax,pmin,pmax,nx,ny")
    qmin, qmax, pmin, pmax = (float(s) for s in parts[:4])
    return cartesian_grid(qmin, qmax, pmin, pmax, int(parts[4]), int(parts[5]), order)
