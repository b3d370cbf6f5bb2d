"""Deformation of the linear model inside two small balls, with exact Jacobian.

The map is g = f_A o h where h is the identity outside B(q, rho) u B(q', rho).
Near q, h performs a pitchfork in the second (weak stable) eigendirection, so
the center-stable rate crosses 1, composed with a localised rotation acting
inside the contracting plane at the bifurcated point q2 (large angles twist
the contracting eigenvalues there into a complex pair, at the cost of larger
center rates: the radial modulation of a rotation by theta costs an in-plane
shear of about 1.66 theta).  Near q' the mirrored deformation acts on the
third (weak unstable) eigendirection, playing the same role for the inverse
map.

All profiles are built from the analytic bump B(sigma) = exp(1 - 1/(1-sigma))
in the squared gauge radius sigma, so displacement and derivative are smooth
and can be evaluated both vectorised (numpy) and in arbitrary precision
(mpmath) for the shadowing-witness path.

Rate conventions (estimated over a splitting field):

    lambda_s  = sup ||Dg|E^cs||   outside B(q, rho)
    lambda_u  = inf m(Dg|E^cu)    outside B(q', rho)
    lambda_cs = sup ||Dg|E^cs||   global
    lambda_cu = inf m(Dg|E^cu)    global
    lambda    = max(lambda_cs, 1/lambda_cu)
    gamma     = max over the two sides of log(center rate) / rate gap
    theta_r   = min(lambda_cs^(1-r) lambda_s^r, lambda_cu^-(1-r) lambda_u^-r)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import mpmath as mp
import numpy as np
from scipy.optimize import brentq

from . import torus
from .anosov import AnosovMatrix
from .errors import GridTooCoarse, InvalidParams

# gauge shape constants (fractions of rho).  The saturation scale must sit
# well inside the axial gauge width: the diffeomorphism condition is
# 1 + d(displacement)/d(axis coordinate) > 0, and the parasitic bump-gradient
# term scales like amp * cstar / rho_axis.
_RHO_AXIS_FRAC = 0.40         # gauge half-width along the bifurcation axis
_RHO_PERP_FRAC = 0.45         # gauge half-width transverse to it
_CSTAR_FRAC = _RHO_AXIS_FRAC / 20.0   # saturation scale of the pitchfork profile
_ROT_WIDE = 30.0              # rotation gauge widening in the free directions


def bump(sigma):
    """Analytic bump in the squared radius: exp(1 - 1/(1-s)) on [0,1), else 0."""
    s = np.asarray(sigma, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return out


def bump_prime(sigma):
    """d bump / d sigma; equals -bump(s) / (1-s)^2."""
    s = np.asarray(sigma, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = -np.exp(1.0 - 1.0 / (1.0 - s[inside])) / (1.0 - s[inside]) ** 2
    return out


def shape(t):
    """Saturating odd profile t / sqrt(1 + t^4): slope 1 at 0, slope >= -0.27."""
    t = np.asarray(t, dtype=float)
    return t / np.sqrt(1.0 + t ** 4)


def shape_prime(t):
    t = np.asarray(t, dtype=float)
    return (1.0 - t ** 4) / (1.0 + t ** 4) ** 1.5


@dataclass(frozen=True)
class BVParams:
    """User-facing construction parameters.

    The single amplitude steers the q-side pitchfork; the q'-side amplitude is
    derived so both center rates hit the same target lambda.  Scale roles:
    rho is the deformation radius, rho' = 5 rho the leaf-contraction scale,
    rho'' = 63 kappa rho' the uniformity scale, and the chain rho'' < 6 eta
    must hold.
    """

    rho: float
    pitchfork_amplitude: float
    rotation_angle: float
    beta: float
    q: np.ndarray
    qprime: np.ndarray

    @property
    def rho_prime(self) -> float:
        return 5.0 * self.rho

    def rho_second(self, kappa: float) -> float:
        return 63.0 * kappa * self.rho_prime

    def validate(self, A: AnosovMatrix, eta: float) -> None:
        kappa = 2.0 * A.kappa_bar
        if not self.rho > 0:
            raise InvalidParams("rho must be positive")
        if not self.rho < 3 * eta:
            raise InvalidParams(f"need rho < 3 eta: rho={self.rho}, eta={eta}")
        rpp = self.rho_second(kappa)
        if not rpp < 6 * eta:
            raise InvalidParams(
                f"scale chain violated: rho'' = 63*kappa*rho' = {rpp:.6g} >= 6 eta = {6 * eta:.6g}")
        if not 0 < self.beta < 1 / 3:
            raise InvalidParams(f"beta must lie in (0, 1/3), got {self.beta}")
        d = torus.distance(self.q, self.qprime)
        if d <= 2 * self.rho:
            raise InvalidParams("deformation balls overlap")

    @staticmethod
    def default_for(A: AnosovMatrix, rho: float = 2e-4,
                    lambda_target: float = 1.01,
                    rotation_angle: float = 0.05,
                    beta: float = 0.25) -> "BVParams":
        """Fixture parameters: amplitude tuned so the center-stable rate at q
        is lambda_target, deformation centered on the first two fixed points."""
        fps = A.fixed_points()
        if len(fps) < 3:
            raise InvalidParams("need at least three fixed points for the construction")
        l2 = A.eigenvalues[1]
        amp = lambda_target / l2 - 1.0
        return BVParams(rho=rho, pitchfork_amplitude=amp,
                        rotation_angle=rotation_angle, beta=beta,
                        q=fps[0], qprime=fps[1])


@dataclass
class _Lobe:
    """One localised displacement field in a single eigendirection."""

    center: np.ndarray        # lifted center of the gauge
    axis: int                 # eigen index of the displaced direction
    amp: float                # amplitude multiplying the saturating profile
    cstar: float              # profile saturation scale
    rho_axis: float           # gauge half-width along the axis coordinate
    rho_perp: float           # gauge half-width transverse to it
    kind: str = "pitchfork"


@dataclass
class _RotLobe:
    """Localised rotation inside a fixed 2-plane, via orthogonal projection.

    The displacement is U (R(phi) - I) U^T u with U an orthonormal frame of
    the plane and phi a bump of the gauge radius.  With the gauge isotropic
    in the in-plane coordinates the map has determinant exactly 1, and no
    dual-basis amplification enters the derivative.
    """

    center: np.ndarray
    frame: np.ndarray         # orthonormal 4x2 frame of the rotated plane
    angle: float
    rho_pair: float           # gauge half-width inside the plane
    rho_free: float           # gauge half-width transverse to it


class BVMap:
    """g = f_A o h with h a compactly supported analytic deformation."""

    def __init__(self, A: AnosovMatrix, params: BVParams, eta: float):
        params.validate(A, eta)
        self.A = A
        self.params = params
        self.eta = eta
        self._Af = A.entries.astype(float)
        self._Afinv = np.round(np.linalg.inv(self._Af)).astype(float)
        self.V = A.eigenvectors            # columns: eigenvectors ascending
        self.W = np.linalg.inv(self.V)     # rows: dual basis
        rho = params.rho
        l2, l3 = A.eigenvalues[1], A.eigenvalues[2]
        amp = params.pitchfork_amplitude
        self.lambda_target = l2 * (1.0 + amp)
        # mirrored amplitude: the q'-side center rate along e3 matches 1/target
        if self.lambda_target <= 0:
            raise InvalidParams("amplitude drives the center rate nonpositive")
        amp_m = 1.0 / (self.lambda_target * l3) - 1.0
        self.mirror_amplitude = amp_m

        # dual-row norms amplify in-plane gradients; shrink the saturation
        # scale accordingly so the parasitic bump-gradient terms stay small
        dual_amp = max(1.0, float(np.linalg.norm(self.W[1])),
                       float(np.linalg.norm(self.W[2])))
        cstar = rho * _CSTAR_FRAC / dual_amp
        self.cstar = cstar
        self._lobes = []
        if amp != 0.0:
            self._lobes.append(_Lobe(center=params.q.astype(float), axis=1,
                                     amp=amp, cstar=cstar,
                                     rho_axis=rho * _RHO_AXIS_FRAC,
                                     rho_perp=rho * _RHO_PERP_FRAC))
            self._lobes.append(_Lobe(center=params.qprime.astype(float), axis=2,
                                     amp=amp_m, cstar=cstar,
                                     rho_axis=rho * _RHO_AXIS_FRAC,
                                     rho_perp=rho * _RHO_PERP_FRAC))
        self._rots = []
        if amp != 0.0 and params.rotation_angle != 0.0:
            cp = self._axis_fixed_offset(amp, cstar, l2)
            cpm = self._axis_fixed_offset(amp_m, cstar, l3)
            self._rots.append(_RotLobe(
                center=torus.wrap(params.q + cp * self.V[:, 1]),
                frame=A.Fs.frame, angle=params.rotation_angle,
                rho_pair=cp / 2.0,
                rho_free=min(_ROT_WIDE * cp / 2.0, rho / 8.0)))
            self._rots.append(_RotLobe(
                center=torus.wrap(params.qprime + cpm * self.V[:, 2]),
                frame=A.Fu.frame, angle=params.rotation_angle,
                rho_pair=cpm / 2.0,
                rho_free=min(_ROT_WIDE * cpm / 2.0, rho / 8.0)))
        self.map_id = (f"bv:{A.poly}:rho={params.rho}:amp={amp}"
                       f":rot={params.rotation_angle}:beta={params.beta}")
        if self._lobes:
            # the deformation must stay a diffeomorphism: the rotation shear
            # couples to the pitchfork wells, so certify on a support sample
            scan = self.support_samples(per_lobe=1500,
                                        rng=np.random.default_rng(0))
            _, Jscan = self._displacement(scan, with_deriv=True)
            min_det = float(np.min(np.linalg.det(np.eye(4) + Jscan)))
            if min_det < 0.02:
                raise InvalidParams(
                    f"deformation near-singular (min det(I+dD)={min_det:.3f}); "
                    "reduce the amplitude or the rotation angle")
            self.min_jacobian_det = min_det

    def _axis_fixed_offset(self, amp: float, cstar: float, lam: float) -> float:
        """Positive axis coordinate of the bifurcated fixed point: solves
        lam * (c + amp * cstar * S(c/cstar) * bump) = c on (0, support)."""

        def fn(c):
            sig = (c / (self.params.rho * _RHO_AXIS_FRAC)) ** 2
            return lam * (c + amp * cstar * float(shape(c / cstar)) * float(bump(sig))) - c

        hi = 0.98 * self.params.rho * _RHO_AXIS_FRAC
        if fn(1e-12 * self.params.rho) * fn(hi) > 0:
            raise InvalidParams("no bifurcated fixed point on the axis (amplitude too small?)")
        return float(brentq(fn, 1e-12 * self.params.rho, hi, xtol=1e-16, rtol=1e-15))

    # ------------------------------------------------------------------
    # displacement field and its exact derivative (vectorised)
    # ------------------------------------------------------------------

    def _displacement(self, x: np.ndarray, with_deriv: bool):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        D = np.zeros_like(x)
        J = np.zeros(x.shape[:-1] + (4, 4)) if with_deriv else None
        for lobe in self._lobes:
            u = torus.frac_delta(x, lobe.center)
            near = np.linalg.norm(u, axis=-1) < self.params.rho
            if not np.any(near):
                continue
            un = u[near]
            c_ax = un @ self.W[lobe.axis]
            e_ax = self.V[:, lobe.axis]
            uperp = un - np.outer(c_ax, e_ax)
            sig = (c_ax / lobe.rho_axis) ** 2 + \
                  np.sum(uperp * uperp, axis=-1) / lobe.rho_perp ** 2
            t = c_ax / lobe.cstar
            B, S = bump(sig), shape(t)
            disp = lobe.amp * lobe.cstar * S * B
            D[near] += np.outer(disp, e_ax)
            if with_deriv:
                Bp, Sp = bump_prime(sig), shape_prime(t)
                # grad sigma = (2 c/ra^2) W_ax + (2/rp^2) uperp (I - e_ax W_ax)
                P = np.eye(4) - np.outer(e_ax, self.W[lobe.axis])
                grad_sig = (2.0 * c_ax / lobe.rho_axis ** 2)[:, None] * self.W[lobe.axis] \
                    + (2.0 / lobe.rho_perp ** 2) * (uperp @ P)
                grad_disp = lobe.amp * (
                    (Sp * B)[:, None] * self.W[lobe.axis]
                    + (lobe.cstar * S * Bp)[:, None] * grad_sig)
                J[near] += e_ax[:, None] * grad_disp[:, None, :]
        for rot in self._rots:
            u = torus.frac_delta(x, rot.center)
            near = np.linalg.norm(u, axis=-1) < self.params.rho
            if not np.any(near):
                continue
            un = u[near]
            U = rot.frame
            p = un @ U                      # orthogonal in-plane coordinates
            perp = un - p @ U.T
            sig = np.sum(p * p, axis=-1) / rot.rho_pair ** 2 \
                + np.sum(perp * perp, axis=-1) / rot.rho_free ** 2
            B = bump(sig)
            phi = rot.angle * B
            cphi, sphi = np.cos(phi), np.sin(phi)
            pi, pj = p[:, 0], p[:, 1]
            ri = cphi * pi - sphi * pj - pi
            rj = sphi * pi + cphi * pj - pj
            D[near] += np.outer(ri, U[:, 0]) + np.outer(rj, U[:, 1])
            if with_deriv:
                Bp = bump_prime(sig)
                grad_sig = (2.0 / rot.rho_pair ** 2) * (p @ U.T) \
                    + (2.0 / rot.rho_free ** 2) * perp
                grad_phi = rot.angle * Bp[:, None] * grad_sig
                # d(R(phi)p - p) = (R(phi)-I) dp + R'(phi) p (x) grad phi
                dri = (cphi - 1.0)[:, None] * U[:, 0] - sphi[:, None] * U[:, 1] \
                    + (-sphi * pi - cphi * pj)[:, None] * grad_phi
                drj = sphi[:, None] * U[:, 0] + (cphi - 1.0)[:, None] * U[:, 1] \
                    + (cphi * pi - sphi * pj)[:, None] * grad_phi
                J[near] += U[:, 0][:, None] * dri[:, None, :] \
                    + U[:, 1][:, None] * drj[:, None, :]
        return D, J

    def pre_map(self, x: np.ndarray) -> np.ndarray:
        """h(x) = x + displacement, reduced mod 1."""
        x = np.asarray(x, dtype=float)
        D, _ = self._displacement(x, with_deriv=False)
        return torus.wrap(x + D.reshape(x.shape))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return torus.wrap(self.pre_map(x) @ self._Af.T)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        _, J = self._displacement(x, with_deriv=True)
        out = self._Af @ (np.eye(4) + J)
        return out[0] if single else out

    def inverse(self, y: np.ndarray) -> np.ndarray:
        """h^{-1}(A^{-1} y) by Newton iteration on the displacement."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        target = torus.wrap(np.atleast_2d(y) @ self._Afinv.T)
        u = target.copy()
        for _ in range(60):
            D, J = self._displacement(u, with_deriv=True)
            resid = torus.frac_delta(u + D, target)
            if np.max(np.abs(resid)) < 1e-14:
                break
            step = np.linalg.solve(np.eye(4) + J, resid[..., None])[..., 0]
            u = torus.wrap(u - step)
        out = torus.wrap(u)
        return out[0] if single else out

    def inverse_jacobian(self, y: np.ndarray) -> np.ndarray:
        x = self.inverse(y)
        J = self.jacobian(x)
        return np.linalg.inv(J)

    def preserves_lattice(self, m: int) -> bool:
        return len(self._lobes) == 0 and len(self._rots) == 0

    # ------------------------------------------------------------------
    # diagnostics
    # ------------------------------------------------------------------

    def pitchfork_points(self):
        """The two bifurcated fixed points on the q-side axis (q +- c e2)."""
        l2 = self.A.eigenvalues[1]
        cstar = self.params.rho * _CSTAR_FRAC
        cp = self._axis_fixed_offset(self.params.pitchfork_amplitude, cstar, l2)
        e2 = self.V[:, 1]
        return (torus.wrap(self.params.q - cp * e2),
                torus.wrap(self.params.q + cp * e2))

    def support_samples(self, per_lobe: int = 2000,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Points concentrated inside the deformation supports, for sup/inf scans."""
        rng = rng or np.random.default_rng(0)
        pts = []
        for lobe in self._lobes:
            c_ax = (rng.random(per_lobe) * 2 - 1) * lobe.rho_axis
            perp = rng.normal(size=(per_lobe, 4))
            perp -= np.outer(perp @ self.W[lobe.axis], self.V[:, lobe.axis])
            perp /= np.linalg.norm(perp, axis=1, keepdims=True)
            rad = lobe.rho_perp * rng.random(per_lobe) ** 0.5
            pts.append(torus.wrap(lobe.center + np.outer(c_ax, self.V[:, lobe.axis])
                                  + perp * rad[:, None]))
        for rot in self._rots:
            ang = rng.random(per_lobe) * 2 * np.pi
            rad = rot.rho_pair * rng.random(per_lobe) ** 0.5
            in_plane = (rad * np.cos(ang))[:, None] * rot.frame[:, 0] \
                + (rad * np.sin(ang))[:, None] * rot.frame[:, 1]
            z = rng.normal(size=(per_lobe, 4))
            z -= (z @ rot.frame) @ rot.frame.T
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            rad_f = rot.rho_free * rng.random(per_lobe) ** 0.5
            pts.append(torus.wrap(rot.center + in_plane + z * rad_f[:, None]))
        if not pts:
            return np.empty((0, 4))
        return np.concatenate(pts)

    # ------------------------------------------------------------------
    # arbitrary precision backend (single point, list of mpf)
    # ------------------------------------------------------------------

    def _mp_displacement(self, x):
        D = [mp.mpf(0)] * 4
        for lobe in self._lobes:
            u = [_mp_frac(x[k] - mp.mpf(float(lobe.center[k]))) for k in range(4)]
            if mp.sqrt(mp.fsum(v * v for v in u)) >= self.params.rho:
                continue
            W_ax = [mp.mpf(float(w)) for w in self.W[lobe.axis]]
            e_ax = [mp.mpf(float(v)) for v in self.V[:, lobe.axis]]
            c_ax = mp.fsum(W_ax[k] * u[k] for k in range(4))
            uperp = [u[k] - c_ax * e_ax[k] for k in range(4)]
            sig = (c_ax / lobe.rho_axis) ** 2 \
                + mp.fsum(v * v for v in uperp) / mp.mpf(lobe.rho_perp) ** 2
            if sig >= 1:
                continue
            B = mp.e ** (1 - 1 / (1 - sig))
            t = c_ax / lobe.cstar
            S = t / mp.sqrt(1 + t ** 4)
            disp = mp.mpf(lobe.amp) * lobe.cstar * S * B
            for k in range(4):
                D[k] += disp * e_ax[k]
        for rot in self._rots:
            u = [_mp_frac(x[k] - mp.mpf(float(rot.center[k]))) for k in range(4)]
            if mp.sqrt(mp.fsum(v * v for v in u)) >= self.params.rho:
                continue
            U = rot.frame
            p0 = mp.fsum(mp.mpf(float(U[k, 0])) * u[k] for k in range(4))
            p1 = mp.fsum(mp.mpf(float(U[k, 1])) * u[k] for k in range(4))
            perp = [u[k] - p0 * mp.mpf(float(U[k, 0])) - p1 * mp.mpf(float(U[k, 1]))
                    for k in range(4)]
            sig = (p0 ** 2 + p1 ** 2) / mp.mpf(rot.rho_pair) ** 2 \
                + mp.fsum(v * v for v in perp) / mp.mpf(rot.rho_free) ** 2
            if sig >= 1:
                continue
            B = mp.e ** (1 - 1 / (1 - sig))
            phi = mp.mpf(rot.angle) * B
            ri = mp.cos(phi) * p0 - mp.sin(phi) * p1 - p0
            rj = mp.sin(phi) * p0 + mp.cos(phi) * p1 - p1
            for k in range(4):
                D[k] += ri * mp.mpf(float(U[k, 0])) + rj * mp.mpf(float(U[k, 1]))
        return D

    def mp_apply(self, x):
        D = self._mp_displacement(x)
        h = [x[k] + D[k] for k in range(4)]
        A = self.A.entries
        return [_mp_frac(mp.fsum(int(A[r, k]) * h[k] for k in range(4)))
                for r in range(4)]

    def mp_inverse(self, y):
        A_inv = np.round(self._Afinv).astype(np.int64)
        target = [_mp_frac(mp.fsum(int(A_inv[r, k]) * y[k] for k in range(4)))
                  for r in range(4)]
        u = list(target)
        for _ in range(80):
            D = self._mp_displacement(u)
            resid = [_mp_frac(u[k] + D[k] - target[k]) for k in range(4)]
            if max(abs(r) for r in resid) < mp.mpf(10) ** (-mp.mp.dps + 6):
                break
            # displacement Lipschitz constant < 1 is not guaranteed, but the
            # float Jacobian is an excellent preconditioner at these scales
            Jf = self.jacobian(np.array([float(v) for v in u]))
            Minv = np.linalg.inv(self._Afinv @ Jf)  # = (I + dD)^{-1}
            for k in range(4):
                u[k] = _mp_frac(u[k] - mp.fsum(
                    mp.mpf(float(Minv[k, l])) * resid[l] for l in range(4)))
        return u

    def mp_jacobian(self, x):
        """A (I + dD) with dD evaluated by central differences in mp.

        The displacement is analytic; a small-step central difference at
        extended precision is accurate far beyond float64 and avoids
        duplicating the closed-form derivative in a second backend.
        """
        step = mp.mpf(10) ** (-int(mp.mp.dps * 0.4))
        dD = mp.matrix(4, 4)
        for k in range(4):
            xp = list(x); xp[k] = xp[k] + step
            xm = list(x); xm[k] = xm[k] - step
            Dp, Dm = self._mp_displacement(xp), self._mp_displacement(xm)
            for r in range(4):
                dD[r, k] = (Dp[r] - Dm[r]) / (2 * step)
        Amp = mp.matrix(self.A.entries.tolist())
        return Amp * (mp.eye(4) + dD)


def _mp_frac(v):
    return v - mp.floor(v + mp.mpf("0.5"))


def construct_bv(A: AnosovMatrix, params: BVParams, eta: float) -> BVMap:
    """Validated construction; amplitude 0 and angle 0 reproduce f_A exactly."""
    return BVMap(A, params, eta)


def derivative(g, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian of a map at x (analytic, not finite-difference)."""
    return g.jacobian(x)


# ---------------------------------------------------------------------------
# rate report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    lambda_s: float
    lambda_u: float
    lambda_cs: float
    lambda_cu: float
    lam: float
    gamma: float
    theta_r: dict[str, float]
    theta_cs: float
    theta_cu: float
    sample_mesh: float
    n_samples: int
    rate_err: float = 0.0     # mesh-dependent bias bar, logged not applied

    @staticmethod
    def gamma_of(lambda_s: float, lambda_u: float,
                 lambda_cs: float, lambda_cu: float) -> float:
        """Crossing exponent; 0 on either side where the center rate does not
        cross 1 (the purely hyperbolic situation)."""
        terms = [0.0]
        if lambda_cs > 1.0 and lambda_s < 1.0:
            terms.append(math.log(lambda_cs)
                         / (math.log(lambda_cs) - math.log(lambda_s)))
        if lambda_cu < 1.0 and lambda_u > 1.0:
            terms.append(math.log(lambda_cu)
                         / (math.log(lambda_cu) - math.log(lambda_u)))
        return max(terms)

    @staticmethod
    def theta_of(r: float, lambda_s: float, lambda_u: float,
                 lambda_cs: float, lambda_cu: float) -> float:
        t1 = lambda_cs ** (1 - r) * lambda_s ** r
        t2 = lambda_cu ** -(1 - r) * lambda_u ** -r
        return min(t1, t2)

    def theta_at(self, r: float) -> float:
        return self.theta_of(r, self.lambda_s, self.lambda_u,
                             self.lambda_cs, self.lambda_cu)

    def nu_at(self, r: float) -> float:
        return self.lam / self.theta_at(r)

    def to_json(self) -> dict:
        return {
            "lambda_s": self.lambda_s, "lambda_u": self.lambda_u,
            "lambda_cs": self.lambda_cs, "lambda_cu": self.lambda_cu,
            "lambda": self.lam, "gamma": self.gamma,
            "theta_r": dict(self.theta_r),
            "theta_cs": self.theta_cs, "theta_cu": self.theta_cu,
            "sample_mesh": self.sample_mesh, "n_samples": self.n_samples,
            "rate_err": self.rate_err,
        }


def estimate_rates(g, splitting, r_values) -> RateReport:
    """Sup/inf of the restricted derivative norms over the splitting's samples.

    The splitting field must resolve both deformation balls; otherwise the
    global rates would silently coincide with the off-ball ones.
    """
    pts = splitting.points
    J = g.jacobian(pts)
    s_cs = np.linalg.svd(J @ splitting.planes_cs, compute_uv=False)[:, 0]
    s_cu = np.linalg.svd(J @ splitting.planes_cu, compute_uv=False)[:, -1]
    q, qp, rho = g.params.q, g.params.qprime, g.params.rho
    in_q = torus.distance(pts, q) < rho
    in_qp = torus.distance(pts, qp) < rho
    if not np.any(in_q) or not np.any(in_qp):
        raise GridTooCoarse("splitting samples miss a deformation ball")
    lambda_cs = float(np.max(s_cs))
    lambda_cu = float(np.min(s_cu))
    lambda_s = float(np.max(s_cs[~in_q]))
    lambda_u = float(np.min(s_cu[~in_qp]))
    lam = max(lambda_cs, 1.0 / lambda_cu)
    gamma = RateReport.gamma_of(lambda_s, lambda_u, lambda_cs, lambda_cu)
    theta = {str(r): RateReport.theta_of(r, lambda_s, lambda_u, lambda_cs, lambda_cu)
             for r in r_values}
    # crude bias bar: restricted-norm variability across nearest samples
    err = float(splitting.mesh * np.median(np.abs(np.diff(np.sort(s_cs))))
                * len(s_cs) ** 0.25)
    return RateReport(
        lambda_s=lambda_s, lambda_u=lambda_u, lambda_cs=lambda_cs,
        lambda_cu=lambda_cu, lam=lam, gamma=gamma, theta_r=theta,
        theta_cs=0.8 + 0.2 * lambda_s, theta_cu=0.8 + 0.2 / lambda_u,
        sample_mesh=splitting.mesh, n_samples=len(pts), rate_err=err)


def check_rate_inequality(rates: RateReport, beta: float) -> bool:
    """(1+beta)(lambda - lambda_s)/(1 - lambda_s) < 2, needed by the
    large-scale leaf contraction argument."""
    return (1 + beta) * (rates.lam - rates.lambda_s) / (1 - rates.lambda_s) < 2


# ---------------------------------------------------------------------------
# cone certification and C0 distance
# ---------------------------------------------------------------------------

def _cone_ratio(J: np.ndarray, V: np.ndarray, W: np.ndarray,
                grow: tuple[int, int], shrink: tuple[int, int],
                beta: float, n_dir: int = 24) -> float:
    """Worst ratio ||shrink part|| / ||grow part|| of images of the beta-cone
    boundary rays around span(grow directions)."""
    angles = np.linspace(0.0, 2 * np.pi, n_dir, endpoint=False)
    uu = np.cos(angles)[:, None] * V[:, grow[0]] + np.sin(angles)[:, None] * V[:, grow[1]]
    ss = np.cos(angles)[:, None] * V[:, shrink[0]] + np.sin(angles)[:, None] * V[:, shrink[1]]
    worst = 0.0
    for bfac in (0.0, 0.5, 1.0):
        # rays v = u + beta_fac * beta * ||u|| * s / ||s||  (decomposition norms)
        un = np.linalg.norm(uu, axis=1)
        sn = np.linalg.norm(ss, axis=1)
        for i in range(n_dir):
            vs = uu[i] + bfac * beta * un[i] * ss / sn[:, None]
            img = vs @ J.T
            cg = img @ W[list(grow)].T
            cs_ = img @ W[list(shrink)].T
            g_part = np.linalg.norm(cg @ np.array([V[:, grow[0]], V[:, grow[1]]]), axis=1)
            s_part = np.linalg.norm(cs_ @ np.array([V[:, shrink[0]], V[:, shrink[1]]]), axis=1)
            worst = max(worst, float(np.max(s_part / g_part)))
    return worst


def cone_check(g, beta: float, points: np.ndarray, n_dir: int = 16):
    """Forward invariance of the unstable beta-cone and backward invariance of
    the stable one, via extremal rays at each sample point.

    Returns (ok, margin, witness): margin is beta minus the worst image tilt
    ratio; a negative margin comes with the violating point.
    """
    model = getattr(g, "A", None)
    if model is None:
        raise ValueError("cone_check needs a map carrying its linear model")
    V = model.eigenvectors
    W = np.linalg.inv(V)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = -np.inf
    witness = None
    for x in pts:
        J = g.jacobian(x)
        r_fwd = _cone_ratio(J, V, W, grow=(2, 3), shrink=(0, 1), beta=beta, n_dir=n_dir)
        Jinv = np.linalg.inv(J)
        r_bwd = _cone_ratio(Jinv, V, W, grow=(0, 1), shrink=(2, 3), beta=beta, n_dir=n_dir)
        r = max(r_fwd, r_bwd)
        if r > worst:
            worst, witness = r, x
    margin = beta - worst
    return margin > 0, float(margin), witness


def c0_distance(g, f, points: np.ndarray, lipschitz: float | None = None,
                mesh: float = 0.0):
    """Max displacement between two maps over the samples, with the
    mesh-dependent upper-bias correction reported alongside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = torus.distance(g(pts), f(pts))
    bound_term = 0.0 if lipschitz is None else mesh * lipschitz
    return float(np.max(d)), bound_term
