"""Flat geometry of T^4 = R^4 / Z^4 and orbit-segment primitives.

Points are numpy arrays of shape (4,) (or batches of shape (..., 4)) with
coordinates canonically reduced to [0, 1).  The metric is the Euclidean
quotient metric: distance is minimised over integer translates, so the
diameter of the torus is 1 and no coordinate offset exceeds 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

DIM = 4

#: Diameter of T^4 in the flat quotient metric: sqrt(4 * (1/2)^2).
DIAMETER = 1.0


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce coordinates mod 1 into the canonical cell [0, 1)^4."""
    return np.mod(x, 1.0)


def frac_delta(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Shortest representative of x - y, componentwise in [-1/2, 1/2)."""
    d = np.asarray(x) - np.asarray(y)
    return d - np.round(d)


def distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Quotient distance: min over integer translates of the Euclidean norm.

    Broadcasts over leading axes, returning a scalar for single points.
    """
    d = frac_delta(x, y)
    return np.sqrt(np.sum(d * d, axis=-1))


def orbit(map_, x: np.ndarray, n: int) -> np.ndarray:
    """First n points of the forward orbit (x, f x, ..., f^{n-1} x).

    Works for a single point (returns (n, 4)) or a batch (N, 4) of starting
    points (returns (n, N, 4)).
    """
    if n < 1:
        raise ValueError("orbit length must be >= 1")
    x = wrap(np.asarray(x, dtype=float))
    out = np.empty((n,) + x.shape, dtype=float)
    out[0] = x
    for k in range(1, n):
        x = map_(x)
        out[k] = x
    return out


def dn(map_, x: np.ndarray, y: np.ndarray, n: int):
    """Orbit-segment metric d_n(x, y) = max of d(f^k x, f^k y) over 0 <= k < n.

    Broadcasts like `distance`: scalar for single points, array for batches.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    best = distance(x, y)
    for _ in range(n - 1):
        x = map_(x)
        y = map_(y)
        best = np.maximum(best, distance(x, y))
    return best


def dn_orbits(orb_x: np.ndarray, orb_y: np.ndarray) -> np.ndarray:
    """d_n from precomputed orbits of equal length; broadcasts over batches.

    orb_x has shape (n, 4) and orb_y shape (n, 4) or (n, N, 4).
    """
    if orb_y.ndim == 3:
        d = distance(orb_x[:, None, :], orb_y)
    else:
        d = distance(orb_x, orb_y)
    return np.max(d, axis=0)


def is_in_bowen_ball(map_, center: np.ndarray, radius: float, n: int,
                     y: np.ndarray) -> bool:
    """Whether y lies in the order-n Bowen ball around center: d_n < radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return bool(dn(map_, center, y, n) < radius)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice (i/m for i < m) on each coordinate, never materialised.

    A mesh of 1/32 already has 32^4 ~ 1.05M points, so iteration is chunked.
    Every point of T^4 is within (1/m) * sqrt(4)/2 of a lattice point.
    """

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("grid subdivisions must be >= 1")

    @property
    def mesh(self) -> float:
        return 1.0 / self.m

    @property
    def count(self) -> int:
        return self.m ** DIM

    @property
    def covering_radius(self) -> float:
        return self.mesh * np.sqrt(DIM) / 2.0

    def block(self, start: int, stop: int) -> np.ndarray:
        """Points with flat lattice index in [start, stop), shape (stop-start, 4)."""
        idx = np.arange(start, stop, dtype=np.int64)
        return self.from_flat(idx)

    def from_flat(self, idx: np.ndarray) -> np.ndarray:
        """Decode flat indices (row-major over 4 axes) to lattice points."""
        out = np.empty(idx.shape + (DIM,), dtype=float)
        rem = idx
        for axis in range(DIM - 1, -1, -1):
            out[..., axis] = rem % self.m
            rem = rem // self.m
        return out / self.m

    def iter_blocks(self, block_size: int = 1 << 16) -> Iterator[np.ndarray]:
        for start in range(0, self.count, block_size):
            yield self.block(start, min(start + block_size, self.count))

    def points(self) -> np.ndarray:
        """All lattice points at once; only safe for small m."""
        return self.block(0, self.count)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        idx = rng.integers(0, self.count, size=k)
        return self.from_flat(idx)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Nearest lattice point(s) to x."""
        return wrap(np.round(np.asarray(x) * self.m) / self.m)


def ball_cluster(center: np.ndarray, radius: float, submesh: int) -> np.ndarray:
    """Points of a fine local lattice inside the quotient ball B(center, radius).

    Used to resolve structures far below the global grid mesh (for instance
    the perturbation balls).  Returns an (N, 4) array including the center.
    """
    if submesh < 1:
        raise ValueError("submesh must be >= 1")
    step = radius / submesh
    axis = np.arange(-submesh, submesh + 1) * step
    g = np.stack(np.meshgrid(*([axis] * DIM), indexing="ij"), axis=-1).reshape(-1, DIM)
    g = g[np.sum(g * g, axis=1) <= radius * radius]
    return wrap(np.asarray(center) + g)
