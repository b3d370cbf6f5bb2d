"""2-dimensional subspaces of R^4 as orthonormal frames, and angle metrics.

A plane is represented by a 4x2 matrix with orthonormal columns.  All
operations depend only on the column span, never on the particular frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSubspaces

_ANGLE_TOL = 1e-10


def orthonormalize(cols: np.ndarray) -> np.ndarray:
    """Orthonormal frame spanning the columns, deterministic up to span.

    Uses thin QR with the sign fixed so the diagonal of R is positive;
    the same column span always yields a frame, and the same input matrix
    always yields the same frame.
    """
    q, r = np.linalg.qr(cols)
    sign = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    sign = np.where(sign == 0, 1.0, sign)
    return q * sign[..., None, :]


@dataclass(frozen=True)
class Plane2:
    """2-plane in R^4 carried as an orthonormal 4x2 frame."""

    frame: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frame, dtype=float)
        if f.shape != (4, 2):
            raise ValueError("frame must be 4x2")
        gram = f.T @ f
        if not np.allclose(gram, np.eye(2), atol=1e-12):
            raise ValueError("frame columns must be orthonormal to 1e-12")
        object.__setattr__(self, "frame", f)

    @classmethod
    def from_span(cls, cols: np.ndarray) -> "Plane2":
        cols = np.asarray(cols, dtype=float)
        if cols.shape != (4, 2) or np.linalg.matrix_rank(cols, tol=1e-12) != 2:
            raise ValueError("need two independent spanning columns")
        return cls(orthonormalize(cols))


def principal_cosines(F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """Cosines of the principal angles between two orthonormal frames (desc)."""
    s = np.linalg.svd(F1.T @ F2, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def dG(V: Plane2, W: Plane2) -> float:
    """Distance between planes: sine of the largest principal angle.

    Equivalent (up to fixed constants) to the Hausdorff distance between the
    unit circles of the planes; see the dense-sample cross-check in the tests.
    Computed as the spectral norm of the projection of one frame off the
    other, which stays accurate for nearly equal planes.
    """
    F, G = _frame(V), _frame(W)
    proj = G - F @ (F.T @ G)
    s = np.linalg.svd(proj, compute_uv=False)
    return float(np.clip(s[0], 0.0, 1.0))


def kappa_bar(F1: Plane2, F2: Plane2) -> float:
    """1 / sin of the minimal angle between nonzero vectors of the two planes.

    Always >= 1; equals 1 exactly when the planes are orthogonal.  Raises
    DegenerateSubspaces when the planes share a direction up to tolerance.
    """
    c = principal_cosines(_frame(F1), _frame(F2))
    sin_min = np.sqrt(max(0.0, 1.0 - c[0] ** 2))
    if sin_min < _ANGLE_TOL:
        raise DegenerateSubspaces(
            f"minimal principal angle below tolerance (sin = {sin_min:.3e})")
    return float(1.0 / sin_min)


def _frame(P) -> np.ndarray:
    return P.frame if isinstance(P, Plane2) else np.asarray(P, dtype=float)
