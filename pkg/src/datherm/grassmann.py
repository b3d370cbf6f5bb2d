"""Dynamics on 2-planes: invariant splittings, the plane potential, Lyapunov
exponents, and the contraction check behind the regularity of the geometric
potential.

The derivative acts on the plane bundle by (x, V) -> (g x, Dg V).  Forward
iteration from the expanding eigenplane of the linear model converges to the
center-unstable distribution wherever the splitting is dominated; the
center-stable field is the same construction for the inverse map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import torus
from .errors import NoConvergence, NotGood
from .planes import Plane2, dG, orthonormalize
from .pressure import Potential


class _SwappedModel:
    """Linear-model view for the inverse map: expanding and contracting
    eigenplanes exchange roles."""

    def __init__(self, model):
        self.Fu = model.Fs
        self.Fs = model.Fu


class InverseMap:
    """View of g^{-1} with the same batched interface as g."""

    def __init__(self, g):
        self.g = g
        self.map_id = f"inverse({g.map_id})"
        model = getattr(g, "A", None)
        if model is not None:
            self.A = _SwappedModel(model)

    def __call__(self, x):
        return self.g.inverse(x)

    def inverse(self, y):
        return self.g(y)

    def jacobian(self, x):
        J = self.g.jacobian(self.g.inverse(x))
        return np.linalg.inv(J)


def push(map_, x: np.ndarray, V: Plane2) -> tuple[np.ndarray, Plane2]:
    """One step of the plane dynamics: image point and orthonormalised image."""
    J = map_.jacobian(x)
    return map_(x), Plane2(orthonormalize(J @ V.frame))


def _push_frames(map_, pts: np.ndarray, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    J = map_.jacobian(pts)
    return map_(pts), orthonormalize(J @ frames)


def _frames_distance(F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """sin of the largest principal angle, batched over leading axes.

    Computed as the spectral norm of (I - F F^T) G, which stays accurate for
    nearly equal planes (no cancellation against 1).
    """
    Ft = np.swapaxes(F, -1, -2)
    proj = G - F @ (Ft @ G)
    s = np.linalg.svd(proj, compute_uv=False)
    return np.clip(s[..., 0], 0.0, 1.0)


def compute_Ecu(map_, x: np.ndarray, tol: float = 1e-10, max_iter: int = 60,
                seed: Plane2 | None = None) -> Plane2:
    """Center-unstable plane at x by forward iteration along the backward orbit.

    P_n = Dg^n(g^{-n} x) applied to the seed plane, with n grown until two
    consecutive planes agree to tol.  Deterministic: the seed defaults to the
    expanding eigenplane of the underlying linear model.
    """
    frames = compute_field_frames(map_, np.atleast_2d(np.asarray(x, float)),
                                  tol=tol, max_iter=max_iter, seed=seed)
    return Plane2(frames[0])


def compute_field_frames(map_, pts: np.ndarray, tol: float = 1e-10,
                         max_iter: int = 60, seed: Plane2 | None = None) -> np.ndarray:
    """Batched center-unstable frames at pts; see compute_Ecu."""
    if seed is None:
        seed = _linear_model(map_).Fu
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    N = len(pts)
    prev = None
    frames = None
    # backward orbit: x, g^-1 x, ..., g^-K x
    back = [pts]
    for n in range(1, max_iter + 1):
        back.append(map_.inverse(back[-1]))
        cur_pts = back[-1]
        F = np.broadcast_to(seed.frame, (N, 4, 2)).copy()
        for k in range(n, 0, -1):
            cur_pts2 = back[k]
            J = map_.jacobian(cur_pts2)
            F = orthonormalize(J @ F)
        frames = F
        if prev is not None:
            if float(np.max(_frames_distance(prev, frames))) < tol:
                return frames
        prev = frames
    raise NoConvergence(f"plane iteration did not reach tol={tol} in {max_iter} steps")


def _linear_model(map_):
    A = getattr(map_, "A", None)
    if A is not None:
        return A
    raise ValueError("map does not carry a linear model; pass an explicit seed")


@dataclass
class SplittingField:
    """Cached invariant plane fields over a sample set, with residuals.

    Queries snap to the nearest sample and apply one invariance refinement:
    push the cached plane at g^{-1}(x) (nearest sample) forward through the
    derivative at the true preimage.
    """

    points: np.ndarray          # (N, 4)
    planes_cu: np.ndarray       # (N, 4, 2)
    planes_cs: np.ndarray       # (N, 4, 2)
    residual_cu: np.ndarray     # (N,)
    residual_cs: np.ndarray
    mesh: float
    map_id: str
    lattice_m: int | None = None   # fast nearest lookup when points start with a lattice

    def query_frames(self, x: np.ndarray, which: str = "cu") -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = self._nearest(x)
        return (self.planes_cu if which == "cu" else self.planes_cs)[idx]

    def query(self, x: np.ndarray, which: str = "cu") -> Plane2:
        return Plane2(self.query_frames(x, which)[0])

    def query_refined(self, map_, x: np.ndarray, which: str = "cu") -> np.ndarray:
        """Nearest-sample plane improved by one invariance step at x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if which == "cu":
            pre = map_.inverse(x)
            F = self.query_frames(pre, "cu")
            J = map_.jacobian(pre)
            return orthonormalize(J @ F)
        post = map_(x)
        F = self.query_frames(post, "cs")
        J = np.linalg.inv(map_.jacobian(x))
        return orthonormalize(J @ F)

    def _nearest(self, x: np.ndarray) -> np.ndarray:
        if self.lattice_m is not None:
            m = self.lattice_m
            lat = np.round(x * m).astype(np.int64) % m
            flat = ((lat[:, 0] * m + lat[:, 1]) * m + lat[:, 2]) * m + lat[:, 3]
            idx = flat  # lattice points come first, in row-major order
            d_lat = torus.distance(self.points[idx], x)
            if len(self.points) > m ** 4:
                extra = self.points[m ** 4:]
                # brute-force the cluster tail in chunks (clusters are small)
                d = torus.distance(x[:, None, :], extra[None, :, :])
                j = np.argmin(d, axis=1)
                better = d[np.arange(len(x)), j] < d_lat
                idx = np.where(better, m ** 4 + j, idx)
            return idx
        d = torus.distance(x[:, None, :], self.points[None, :, :])
        return np.argmin(d, axis=1)

    def to_json(self) -> dict:
        return {
            "map_id": self.map_id, "mesh": self.mesh,
            "lattice_m": self.lattice_m,
            "points": self.points.tolist(),
            "planes_cu": self.planes_cu.tolist(),
            "planes_cs": self.planes_cs.tolist(),
            "residual_cu": self.residual_cu.tolist(),
            "residual_cs": self.residual_cs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SplittingField":
        return cls(points=np.asarray(doc["points"]),
                   planes_cu=np.asarray(doc["planes_cu"]),
                   planes_cs=np.asarray(doc["planes_cs"]),
                   residual_cu=np.asarray(doc["residual_cu"]),
                   residual_cs=np.asarray(doc["residual_cs"]),
                   mesh=float(doc["mesh"]), map_id=doc["map_id"],
                   lattice_m=doc.get("lattice_m"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SplittingField":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_splitting(map_, grid, extra_points: np.ndarray | None = None,
                    tol: float = 1e-10, max_iter: int = 60) -> SplittingField:
    """Converged plane fields on a lattice grid plus optional cluster points."""
    pts = grid.points()
    lattice_m = grid.m
    if extra_points is not None and len(extra_points):
        pts = np.concatenate([pts, np.atleast_2d(extra_points)])
    cu = compute_field_frames(map_, pts, tol=tol, max_iter=max_iter)
    inv = InverseMap(map_)
    cs = compute_field_frames(inv, pts, tol=tol, max_iter=max_iter,
                              seed=_linear_model(map_).Fs)
    res_cu = invariance_residual(map_, pts, cu)
    res_cs = invariance_residual(inv, pts, cs)
    return SplittingField(points=pts, planes_cu=cu, planes_cs=cs,
                          residual_cu=res_cu, residual_cs=res_cs,
                          mesh=grid.mesh, map_id=map_.map_id,
                          lattice_m=lattice_m)


def invariance_residual(map_, pts: np.ndarray, frames: np.ndarray,
                        tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
    """d_G(E(g x), Dg(x) E(x)) with E(g x) independently converged."""
    img_pts, img_frames = _push_frames(map_, pts, frames)
    target = compute_field_frames(map_, img_pts, tol=tol, max_iter=max_iter)
    return _frames_distance(img_frames, target)


# ---------------------------------------------------------------------------
# plane potential and the geometric potential
# ---------------------------------------------------------------------------

def psi(map_, x: np.ndarray, E) -> float | np.ndarray:
    """-(1/2) log Gram determinant of the derivative restricted to the plane.

    For an orthonormal frame U this is -log |det Dg|_E|, the negative log of
    the area expansion of the plane.
    """
    frames = E.frame if isinstance(E, Plane2) else np.asarray(E)
    J = map_.jacobian(x)
    M = J @ frames
    G = np.swapaxes(M, -1, -2) @ M
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    out = -0.5 * np.log(det)
    return float(out) if np.ndim(out) == 0 else out


def phi_geo(map_, splitting: SplittingField, x: np.ndarray) -> float | np.ndarray:
    """Geometric potential: psi evaluated on the center-unstable plane at x."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    frames = splitting.query_refined(map_, x2, "cu")
    out = psi(map_, x2, frames)
    return float(out[0]) if np.ndim(x) == 1 else out


def phi_geo_potential(map_, splitting: SplittingField, t: float = 1.0) -> Potential:
    """t * phi_geo as a Potential; oscillation metadata is empirical only."""

    def fn(x):
        return t * phi_geo(map_, splitting, np.atleast_2d(x))

    return Potential(fn=fn, kind="t_geo", hoelder=None, haar_mean=None,
                     name=f"{t}*phi_geo")


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------

def lyapunov_exponents(map_, x: np.ndarray, n: int, burn_in: int = 200,
                       return_volume_average: bool = False):
    """QR-orthogonalised cocycle averages along the orbit of x, descending.

    The first burn_in steps align the frame without accumulating, which
    removes the transient exactly for a constant cocycle.  With
    return_volume_average=True also returns the Birkhoff average of
    log |det Dg| over the same window (equals the exponent sum up to
    rounding).
    """
    x = torus.wrap(np.asarray(x, dtype=float))
    Q = np.eye(4)
    for _ in range(burn_in):
        J = map_.jacobian(x)
        Q, _ = np.linalg.qr(J @ Q)
        x = map_(x)
    acc = np.zeros(4)
    vol = 0.0
    for _ in range(n):
        J = map_.jacobian(x)
        Q, R = np.linalg.qr(J @ Q)
        acc += np.log(np.abs(np.diagonal(R)))
        vol += np.log(np.abs(np.linalg.det(J)))
        x = map_(x)
    exps = np.sort(acc / n)[::-1]
    if return_volume_average:
        return exps, vol / n
    return exps


def lambda_plus(exponents: np.ndarray) -> float:
    """Sum of the strictly positive entries."""
    e = np.asarray(exponents, dtype=float)
    return float(e[e > 0].sum())


# ---------------------------------------------------------------------------
# plane-distance envelope along shadowed pairs
# ---------------------------------------------------------------------------

def bowen_contract_check(map_, splitting: SplittingField, x: np.ndarray, n: int,
                         y: np.ndarray, theta_bound: float, C_bound: float,
                         tol: float = 1e-10, is_good_fn=None):
    """Two-sided exponential envelope for plane distances along paired orbits.

    Evaluates d_G(E^cu(g^k x), E^cu(g^k y)) for 0 <= k <= n with independently
    converged planes and tests d_k <= C_bound (theta^k + theta^{n-k}).
    Returns (ok, max_ratio, fitted_C).
    """
    if is_good_fn is not None and not is_good_fn(x, n):
        raise NotGood("base segment is not in the good collection")
    ox = torus.orbit(map_, x, n + 1)
    oy = torus.orbit(map_, y, n + 1)
    fx = compute_field_frames(map_, ox, tol=tol)
    fy = compute_field_frames(map_, oy, tol=tol)
    d = _frames_distance(fx, fy)
    ks = np.arange(n + 1, dtype=float)
    env = theta_bound ** ks + theta_bound ** (n - ks)
    ratios = d / (C_bound * env)
    fitted = float(np.max(d / env))
    return bool(np.all(ratios <= 1.0)), float(np.max(ratios)), fitted
