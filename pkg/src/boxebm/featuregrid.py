"""Dense BEV feature map with a world<->grid transform and bilinear lookup.

The grid stores a (W, L, C) array: axis 0 follows world x, axis 1 world y,
channels innermost. Queries outside the stored extent see zeros (zero
padding), which keeps values and gradients finite everywhere so gradient
ascent cannot chase boxes off the map. At exact cell boundaries the
gradient is the right-sided derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class FeatureGrid:
    data: np.ndarray  # (W, L, C) float64, finite
    origin_x: float  # world x of cell (0, 0) center
    origin_y: float
    res: float  # meters per cell

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ConfigError(f"grid data must be (W, L, C), got shape {self.data.shape}")
        w, length, c = self.data.shape
        if w < 2 or length < 2 or c < 1:
            raise ConfigError(f"grid too small: {self.data.shape}")
        if not self.res > 0:
            raise ConfigError(f"grid resolution must be positive, got {self.res}")
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("grid data contains non-finite values")

    @property
    def shape(self):
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def world_to_grid(grid: FeatureGrid, p) -> np.ndarray:
    """Continuous grid coordinates of world point(s) p, shape (..., 2)."""
    p = np.asarray(p, dtype=float)
    origin = np.array([grid.origin_x, grid.origin_y])
    return (p - origin) / grid.res


def grid_to_world(grid: FeatureGrid, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    origin = np.array([grid.origin_x, grid.origin_y])
    return q * grid.res + origin


def _corner_values(grid: FeatureGrid, q: np.ndarray):
    """Zero-padded values at the four cells around each query, plus fractions."""
    w, length, _ = grid.data.shape
    gx, gy = q[:, 0], q[:, 1]
    ix = np.floor(gx)
    iy = np.floor(gy)
    tx = gx - ix
    ty = gy - iy
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)

    def fetch(di, dj):
        cx = ix + di
        cy = iy + dj
        valid = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < length)
        vals = grid.data[np.clip(cx, 0, w - 1), np.clip(cy, 0, length - 1)]
        return vals * valid[:, None]

    return fetch(0, 0), fetch(1, 0), fetch(0, 1), fetch(1, 1), tx[:, None], ty[:, None]


def _interp(v00, v10, v01, v11, tx, ty):
    return (1 - tx) * ((1 - ty) * v00 + ty * v01) + tx * ((1 - ty) * v10 + ty * v11)


def bilinear_many(grid: FeatureGrid, q: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at continuous grid coordinates q (N, 2) -> (N, C)."""
    v00, v10, v01, v11, tx, ty = _corner_values(grid, np.asarray(q, dtype=float))
    return _interp(v00, v10, v01, v11, tx, ty)


def bilinear_grad_many(grid: FeatureGrid, q: np.ndarray):
    """Values (N, C) and analytic Jacobians (N, C, 2) w.r.t. the query point."""
    v00, v10, v01, v11, tx, ty = _corner_values(grid, np.asarray(q, dtype=float))
    val = _interp(v00, v10, v01, v11, tx, ty)
    dx = (1 - ty) * (v10 - v00) + ty * (v11 - v01)
    dy = (1 - tx) * (v01 - v00) + tx * (v11 - v10)
    return val, np.stack([dx, dy], axis=2)


def bilinear(grid: FeatureGrid, q) -> np.ndarray:
    """Single-point bilinear interpolation -> (C,) vector."""
    return bilinear_many(grid, np.asarray(q, dtype=float)[None, :])[0]


def bilinear_grad(grid: FeatureGrid, q):
    """Single-point value (C,) and Jacobian (C, 2) w.r.t. the query point."""
    val, jac = bilinear_grad_many(grid, np.asarray(q, dtype=float)[None, :])
    return val[0], jac[0]
