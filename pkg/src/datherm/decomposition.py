"""Orbit-segment bookkeeping: visit counts, the prefix/middle/suffix split,
derivative bounds along good segments, transverse leaf intersections, the
uniform mixing time, and the gluing construction that witnesses specification.

An orbit segment (x, n) splits as n = p + g + s where the prefix (length p)
has visit frequency below r near the first deformation region, the suffix
(length s) has the mirrored property near the second, and the middle is
"good": every prefix of it spends at least an r-fraction of its time outside
the first region, and every suffix at least an r-fraction outside the second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from . import torus
from .errors import (LeafIntersectionFailure, NoConvergence, NotGood,
                     NotFound, PreconditionTooShort)
from .planes import Plane2


@dataclass(frozen=True)
class IndicatorConfig:
    """Visit-indicator setup: the two centers, the ball radius (the uniformity
    scale rho'' plus the deformation radius rho), and the frequency threshold."""

    q: np.ndarray
    qprime: np.ndarray
    radius: float
    r: float

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("threshold r must lie in (0, 1)")


@dataclass(frozen=True)
class DecompositionTriple:
    p: int
    g: int
    s: int

    @property
    def total(self) -> int:
        return self.p + self.g + self.s


def indicator_values(map_, center: np.ndarray, radius: float, x: np.ndarray,
                     n: int, direction: str = "forward") -> np.ndarray:
    """chi over the orbit: 1 where the iterate is outside B(center, radius).

    direction='backward' walks the inverse map, so the k-th value tests
    g^{-k} x.
    """
    x = torus.wrap(np.asarray(x, dtype=float))
    vals = np.empty(n, dtype=np.int64)
    step = map_.inverse if direction == "backward" else map_
    for k in range(n):
        vals[k] = 1 if torus.distance(x, center) >= radius else 0
        if k + 1 < n:
            x = step(x)
    return vals


def chi_sum(map_, cfg: IndicatorConfig, x: np.ndarray, n: int,
            which: str = "q", direction: str = "forward") -> int:
    """Birkhoff count of iterates outside the chosen indicator ball."""
    if n < 1:
        raise ValueError("n must be >= 1")
    center = cfg.q if which == "q" else cfg.qprime
    return int(indicator_values(map_, center, cfg.radius, x, n, direction).sum())


def _prefix_suffix_sums(map_, cfg: IndicatorConfig, x: np.ndarray, n: int):
    """(S_i chi(x))_{i=0..n} and (S_k chi'(g^{n-k} x))_{k=0..n}."""
    orb = torus.orbit(map_, x, n) if n >= 1 else np.empty((0, 4))
    chi = (torus.distance(orb, cfg.q) >= cfg.radius).astype(np.int64)
    chi_p = (torus.distance(orb, cfg.qprime) >= cfg.radius).astype(np.int64)
    prefix = np.concatenate([[0], np.cumsum(chi)])
    suffix = np.concatenate([[0], np.cumsum(chi_p[::-1])])
    return prefix, suffix


def decompose(map_, cfg: IndicatorConfig, x: np.ndarray, n: int) -> DecompositionTriple:
    """Maximal bad prefix, maximal bad suffix, good middle.

    p is the largest i <= n with S_i chi(x) < i r, s the largest k <= n with
    S_k chi'(g^{n-k} x) < k r.  When the prefix and suffix overlap (p + s >= n)
    the middle is empty and the suffix is truncated to n - p.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    prefix, suffix = _prefix_suffix_sums(map_, cfg, x, n)
    idx = np.arange(n + 1)
    p_candidates = np.flatnonzero(prefix < cfg.r * idx)
    s_candidates = np.flatnonzero(suffix < cfg.r * idx)
    p = int(p_candidates[-1]) if len(p_candidates) else 0
    s = int(s_candidates[-1]) if len(s_candidates) else 0
    if p + s >= n:
        return DecompositionTriple(p=p, g=0, s=n - p)
    return DecompositionTriple(p=p, g=n - p - s, s=s)


def decompose_batch(map_, cfg: IndicatorConfig, xs: np.ndarray,
                    n: int) -> np.ndarray:
    """Vectorised decompose for a batch of segments of equal length.

    Returns an (N, 3) integer array of (p, g, s) rows.  Matches per-point
    decompose up to float orbit divergence: batched and single matrix
    products round differently, and the gap grows like l4^n, so indicator
    values at ball boundaries can differ once n exceeds roughly 20.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    orb = torus.orbit(map_, xs, n)                     # (n, N, 4)
    chi = (torus.distance(orb, cfg.q) >= cfg.radius).astype(np.int64)
    chi_p = (torus.distance(orb, cfg.qprime) >= cfg.radius).astype(np.int64)
    N = xs.shape[0]
    zero = np.zeros((1, N), dtype=np.int64)
    prefix = np.concatenate([zero, np.cumsum(chi, axis=0)])
    suffix = np.concatenate([zero, np.cumsum(chi_p[::-1], axis=0)])
    idx = np.arange(n + 1)[:, None]
    p_mask = prefix < cfg.r * idx
    s_mask = suffix < cfg.r * idx
    p = np.where(p_mask.any(axis=0),
                 n - np.argmax(p_mask[::-1], axis=0), 0)
    s = np.where(s_mask.any(axis=0),
                 n - np.argmax(s_mask[::-1], axis=0), 0)
    out = np.empty((N, 3), dtype=np.int64)
    overlap = p + s >= n
    out[:, 0] = p
    out[:, 2] = np.where(overlap, n - p, s)
    out[:, 1] = n - out[:, 0] - out[:, 2]
    return out


def is_good(map_, cfg: IndicatorConfig, x: np.ndarray, n: int) -> bool:
    """Every prefix stays visit-rich near q and every suffix near q':
    S_i chi(x) >= i r and S_i chi'(g^{n-i} x) >= i r for all 0 <= i <= n."""
    if n == 0:
        return True
    prefix, suffix = _prefix_suffix_sums(map_, cfg, x, n)
    idx = np.arange(n + 1)
    return bool(np.all(prefix >= cfg.r * idx) and np.all(suffix >= cfg.r * idx))


def good_segment_class(map_, cfg: IndicatorConfig, x: np.ndarray, n: int) -> int:
    """Smallest M with (x, n) in the M-extended good collection: max(p, s)."""
    t = decompose(map_, cfg, x, n)
    return max(t.p, t.s)


# ---------------------------------------------------------------------------
# derivative bounds along good segments
# ---------------------------------------------------------------------------

def good_derivative_bounds(map_, splitting, cfg: IndicatorConfig, x: np.ndarray,
                           n: int, M: int, rates, r: float):
    """Numeric check of the four uniform bounds along an M-good segment.

    With theta = theta_r and nu = lambda / theta, verifies for 0 <= i <= n:
      (a) ||Dg^i restricted to E^cs(x)||          <= nu^{2M} theta^i
      (b) ||Dg^{-i} restricted to E^cu(g^n x)||   <= nu^{2M} theta^i
      (c) product of stepwise cs-norms from x      <= nu^{2M} theta^i
      (d) product of stepwise cu-inverse-norms     <= nu^{2M} theta^i
    (c) and (d) are the stepwise (leafwise-contraction) versions of (a), (b).
    Returns (ok, worst_ratio).
    """
    t = decompose(map_, cfg, x, n)
    if t.p > M or t.s > M:
        raise NotGood(f"segment has p={t.p}, s={t.s}, not in the M={M} class")
    theta = rates.theta_at(r)
    nu = rates.nu_at(r)
    orb = torus.orbit(map_, x, n + 1)
    J = map_.jacobian(orb)
    U_cs = splitting.query_refined(map_, orb, "cs")
    U_cu = splitting.query_refined(map_, orb, "cu")
    worst = 0.0
    # cocycle products restricted to the splitting, as 2x2 coordinate blocks
    cs_block = np.swapaxes(U_cs[1:], -1, -2) @ (J[:-1] @ U_cs[:-1])
    cu_block = np.swapaxes(U_cu[1:], -1, -2) @ (J[:-1] @ U_cu[:-1])
    prod_cs = np.eye(2)
    prod_cu_inv = np.eye(2)
    step_cs = 1.0
    step_cu = 1.0
    for i in range(n + 1):
        allowed = nu ** (2 * M) * theta ** i
        if i > 0:
            prod_cs = cs_block[i - 1] @ prod_cs
            prod_cu_inv = prod_cu_inv @ np.linalg.inv(cu_block[n - i])
            step_cs *= np.linalg.norm(cs_block[i - 1], 2)
            step_cu *= np.linalg.norm(np.linalg.inv(cu_block[n - i]), 2)
        vals = (np.linalg.norm(prod_cs, 2), np.linalg.norm(prod_cu_inv, 2),
                step_cs, step_cu)
        worst = max(worst, max(vals) / allowed)
    return worst <= 1.0, float(worst)


# ---------------------------------------------------------------------------
# local leaves and their intersections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafModel:
    """First-order local leaf: base point plus tangent plane, trusted out to
    the given scale."""

    base: np.ndarray
    plane: Plane2
    scale: float


def leaf_intersection(leaf1: LeafModel, leaf2: LeafModel,
                      splitting=None, map_=None, which=("cu", "cs"),
                      max_iter: int = 100, tol: float = 1e-12):
    """Intersection point of two transverse local leaves.

    Affine leaves are solved in closed form.  When a splitting field is
    supplied, the tangent planes are re-queried at the current iterate and
    the solve is repeated; the step sizes must contract or NoConvergence is
    raised.  Returns (point, distance along leaf1, distance along leaf2).
    """
    U1, U2 = leaf1.plane.frame, leaf2.plane.frame
    rhs = torus.frac_delta(leaf2.base, leaf1.base)
    M = np.column_stack([U1, -U2])
    if abs(np.linalg.det(M)) < 1e-12:
        raise LeafIntersectionFailure("leaf tangents are not transverse")
    ts = np.linalg.solve(M, rhs)
    z = torus.wrap(leaf1.base + U1 @ ts[:2])
    d1, d2 = float(np.linalg.norm(ts[:2])), float(np.linalg.norm(ts[2:]))
    if splitting is not None and map_ is not None:
        prev_step = np.inf
        for _ in range(max_iter):
            F1 = splitting.query_refined(map_, z[None], which[0])[0]
            F2 = splitting.query_refined(map_, z[None], which[1])[0]
            r1 = torus.frac_delta(z, leaf1.base)
            r2 = torus.frac_delta(z, leaf2.base)
            # off-graph components of the iterate w.r.t. both local planes
            c1 = r1 - F1 @ (F1.T @ r1)
            c2 = r2 - F2 @ (F2.T @ r2)
            z = torus.wrap(z - 0.5 * (c1 + c2))
            sz = float(np.linalg.norm(c1 + c2))
            if sz < tol:
                break
            if sz > prev_step * 1.5:
                raise NoConvergence("leaf refinement diverged (cone/scale violation?)")
            prev_step = sz
        d1 = float(np.linalg.norm(torus.frac_delta(z, leaf1.base)))
        d2 = float(np.linalg.norm(torus.frac_delta(z, leaf2.base)))
    return z, d1, d2


def leaf_distance_first_order(leaf: LeafModel, x: np.ndarray) -> float:
    """Distance from x to the affine model of the leaf (integer translates
    included)."""
    d = torus.frac_delta(x, leaf.base)
    U = leaf.plane.frame
    return float(np.linalg.norm(d - U @ (U.T @ d)))


# ---------------------------------------------------------------------------
# reachability of stable leaves from pushed unstable leaves
#
# The feasibility question "does the tau-step image of the local unstable
# disc meet the local stable disc of the target, modulo Z^4" is a
# closest-lattice-point problem: find an integer translate k such that
# (t, s) = M^{-1}(k - delta) lands in a tiny box, where M = [A^tau U | -S].
# Brute-force enumeration of k grows like lambda_4^tau, so a reduced lattice
# basis plus Babai rounding is used instead.
# ---------------------------------------------------------------------------

_REACH_SAMPLES = np.array([
    [0.0, 0.0, 0.0, 0.0], [0.37, 0.11, 0.83, 0.59],
    [0.71, 0.47, 0.13, 0.29], [0.05, 0.93, 0.41, 0.67],
])


def _lll_reduce(basis_cols, dps: int = 60):
    """LLL reduction (delta = 0.75) of 4 lattice basis columns, in mpmath.

    Returns (reduced basis as mp matrix, unimodular transform as mp matrix)
    with reduced = basis * transform.
    """
    with mp.workdps(dps):
        B = mp.matrix(basis_cols.tolist()) if isinstance(basis_cols, np.ndarray) \
            else basis_cols.copy()
        n = 4
        T = mp.eye(n)

        def gso():
            Bstar = mp.zeros(n, n)
            mu = mp.zeros(n, n)
            norms = [mp.mpf(0)] * n
            for i in range(n):
                v = [B[r, i] for r in range(n)]
                for j in range(i):
                    mu[i, j] = mp.fsum(B[r, i] * Bstar[r, j] for r in range(n)) / norms[j]
                    v = [v[r] - mu[i, j] * Bstar[r, j] for r in range(n)]
                for r in range(n):
                    Bstar[r, i] = v[r]
                norms[i] = mp.fsum(v[r] * v[r] for r in range(n))
            return Bstar, mu, norms

        k = 1
        guard = 0
        while k < n and guard < 1000:
            guard += 1
            _, mu, norms = gso()
            for j in range(k - 1, -1, -1):
                q = mp.nint(mu[k, j])
                if q != 0:
                    for r in range(n):
                        B[r, k] -= q * B[r, j]
                        T[r, k] -= q * T[r, j]
                    _, mu, norms = gso()
            if norms[k] >= (mp.mpf(3) / 4 - mu[k, k - 1] ** 2) * norms[k - 1]:
                k += 1
            else:
                for r in range(n):
                    B[r, k], B[r, k - 1] = B[r, k - 1], B[r, k]
                    T[r, k], T[r, k - 1] = T[r, k - 1], T[r, k]
                k = max(k - 1, 1)
        return B, T


def _cvp_candidates(G: np.ndarray, target: np.ndarray, spread: int = 1,
                    dps: int = 60) -> np.ndarray:
    """Integer vectors k with G k near target: Babai rounding in an
    LLL-reduced basis plus a small offset box.  Returns (K, 4) integers."""
    with mp.workdps(dps):
        Bred, T = _lll_reduce(np.asarray(G, dtype=float), dps=dps)
        tgt = mp.matrix([[float(v)] for v in target])
        coeffs = mp.lu_solve(Bred, tgt)
        base = np.array([int(mp.nint(coeffs[i])) for i in range(4)])
        Tnp = np.array([[int(mp.nint(T[r, c])) for c in range(4)]
                        for r in range(4)])
    rng = np.arange(-spread, spread + 1)
    offs = np.stack(np.meshgrid(rng, rng, rng, rng, indexing="ij"),
                    axis=-1).reshape(-1, 4)
    return (base + offs) @ Tnp.T


def _reach_solution(A, tau: int, x: np.ndarray, y: np.ndarray,
                    rho_prime: float, margin: float = 1.0):
    """Solve A^tau (x + Fu t) = y + Fs s + k over integer translates k.

    Returns (t, s, k) with both in-plane parameters below rho' * margin, or
    None.  Exact for the linear model; the caller refines against the true
    map in high precision.
    """
    U = A.Fu.frame
    S = A.Fs.frame
    with mp.workdps(40 + int(3 * tau)):
        Amp = mp.matrix(A.entries.tolist())
        Ap = Amp ** tau
        M = mp.zeros(4, 4)
        for rr in range(4):
            for cc in range(2):
                M[rr, cc] = mp.fsum(Ap[rr, l] * mp.mpf(float(U[l, cc]))
                                    for l in range(4))
                M[rr, cc + 2] = -mp.mpf(float(S[rr, cc]))
        Minv = M ** -1
        Minv_np = np.array([[float(Minv[rr, cc]) for cc in range(4)]
                            for rr in range(4)])
        xv = mp.matrix([[mp.mpf(float(v))] for v in x])
        delta = Ap * xv
        delta_np = np.array([float(delta[rr]) - float(y[rr]) for rr in range(4)])
    scale = np.diag([1.0 / rho_prime] * 4)
    G = scale @ Minv_np                          # lattice basis in box units
    target = G @ delta_np
    ks = _cvp_candidates(G, target)
    best = None
    with mp.workdps(40 + int(3 * tau)):
        for k in ks:
            rhs = mp.matrix([[mp.mpf(float(k[rr])) - delta[rr] + mp.mpf(float(y[rr]))]
                             for rr in range(4)])
            ts = mp.lu_solve(M, rhs)
            t = np.array([float(ts[0]), float(ts[1])])
            s = np.array([float(ts[2]), float(ts[3])])
            if np.linalg.norm(t) <= rho_prime * margin and \
               np.linalg.norm(s) <= rho_prime * margin:
                score = np.linalg.norm(t) + np.linalg.norm(s)
                if best is None or score < best[0]:
                    best = (score, t, s, k.astype(np.int64))
    if best is None:
        return None
    return best[1], best[2], best[3]


def tau0(map_, A, rho_prime: float, samples: np.ndarray | None = None,
         cap: int = 200) -> int:
    """Smallest tau such that the tau-step image of every sampled local
    unstable leaf of radius rho' meets every sampled local stable leaf.

    Computed on the linear model of the map (the leaves of the deformed map
    are affine away from the microscopic deformation balls); the gluing
    construction verifies its output a posteriori by direct orbit distances.
    """
    if samples is None:
        samples = _REACH_SAMPLES
    for tau in range(1, cap + 1):
        if all(_reach_solution(A, tau, x, y, rho_prime) is not None
               for x in samples for y in samples):
            return tau
    raise NotFound(f"no uniform mixing time below cap={cap} at rho'={rho_prime}")


def tau0_growth_estimate(A, rho_prime: float, density_radius: float) -> int:
    """Crude cross-check: steps for an unstable disc to expand past the
    density radius, ceil(log(R / rho') / log l3)."""
    l3 = A.eigenvalues[2]
    return max(1, math.ceil(math.log(max(density_radius / rho_prime, 1.0))
                            / math.log(l3)))


def density_radius(A, alpha: float, samples: np.ndarray | None = None) -> float:
    """Radius R such that the unstable plane through any sample is
    alpha-dense: max over sample pairs of the in-plane distance needed to
    come alpha-close to the target."""
    if samples is None:
        samples = _REACH_SAMPLES
    U = A.Fu.frame
    S = A.Fs.frame
    M = np.column_stack([U, -S])
    Minv = np.linalg.inv(M)
    worst = 0.0
    for x in samples:
        for y in samples:
            delta = np.asarray(x) - np.asarray(y)
            best = math.inf
            # grow the in-plane budget geometrically until a translate fits
            for R in [2.0 * 1.6 ** j for j in range(24)]:
                G = np.diag([1 / R, 1 / R, 1 / alpha, 1 / alpha]) @ Minv
                ks = _cvp_candidates(G, G @ delta, spread=1)
                for k in ks:
                    ts = Minv @ (k - delta)
                    if np.linalg.norm(ts[2:]) <= alpha:
                        best = min(best, float(np.linalg.norm(ts[:2])))
                if best < math.inf:
                    break
            if best is math.inf:
                return math.inf
            worst = max(worst, best)
    return worst


# ---------------------------------------------------------------------------
# the gluing construction (specification witness)
# ---------------------------------------------------------------------------

@dataclass
class ShadowingWitness:
    point: np.ndarray             # float64 start of the gluing orbit
    tau: int
    block_defects: list[float]    # max orbit distance to each glued segment
    scale: float                  # the defect budget 3 rho'
    mp_digits: int

    @property
    def ok(self) -> bool:
        return all(d < self.scale for d in self.block_defects)


def min_segment_length(M: int, rates, r: float, tau: int) -> int:
    """Smallest N with theta_r^N nu^{2M} lambda^tau < 1/2."""
    theta = rates.theta_at(r)
    nu = rates.nu_at(r)
    N = 1
    while nu ** (2 * M) * rates.lam ** tau * theta ** N >= 0.5:
        N += 1
        if N > 10_000:
            raise PreconditionTooShort("contraction never beats 1/2; rates too weak")
    return N


def _mp_orbit_step(map_, x, steps: int, forward: bool = True):
    for _ in range(steps):
        x = map_.mp_apply(x) if forward else map_.mp_inverse(x)
    return x


def _mp_matpow_frames(map_, x, tau: int):
    """(D g^tau at x) as an mp matrix, by chaining per-step Jacobians."""
    J = mp.eye(4)
    cur = list(x)
    for _ in range(tau):
        J = map_.mp_jacobian(cur) * J
        cur = map_.mp_apply(cur)
    return J, cur


def _mp_newton_gap(map_, z, target: np.ndarray, tau: int, Ump, Smp,
                   seed_t: np.ndarray, seed_s: np.ndarray,
                   tol_exp: int, max_iter: int = 50):
    """Solve g^tau(z + U t) on the stable plane of the target, in mp.

    U and S must be plane frames at the working precision (float frames leak
    complementary components that blow up under long pullbacks).  The
    residual g^tau(z + U t) - target - S s is reduced to its nearest integer
    translate componentwise, which is smooth once the iterate is in the
    basin (the seed comes from the exact linear solve)."""
    t = [mp.mpf(float(v)) for v in seed_t]
    s = [mp.mpf(float(v)) for v in seed_s]
    if isinstance(Ump, np.ndarray):
        Ump = mp.matrix(Ump.tolist())
    if isinstance(Smp, np.ndarray):
        Smp = mp.matrix(Smp.tolist())
    tgt = [mp.mpf(float(v)) for v in target]
    for _ in range(max_iter):
        w = [z[i] + Ump[i, 0] * t[0] + Ump[i, 1] * t[1] for i in range(4)]
        Jtau, img = _mp_matpow_frames(map_, w, tau)
        F = [img[i] - tgt[i] - Smp[i, 0] * s[0] - Smp[i, 1] * s[1] for i in range(4)]
        F = [f - mp.nint(f) for f in F]
        err = max(abs(f) for f in F)
        if err < mp.mpf(10) ** (-tol_exp):
            return w
        Jac = mp.matrix(4, 4)
        for i in range(4):
            Jac[i, 0] = mp.fsum(Jtau[i, l] * Ump[l, 0] for l in range(4))
            Jac[i, 1] = mp.fsum(Jtau[i, l] * Ump[l, 1] for l in range(4))
            Jac[i, 2] = -Smp[i, 0]
            Jac[i, 3] = -Smp[i, 1]
        try:
            step = mp.lu_solve(Jac, mp.matrix(F))
        except Exception as exc:  # singular system: cone/scale violation
            raise LeafIntersectionFailure(f"gap solve became singular: {exc}")
        t = [t[0] - step[0], t[1] - step[1]]
        s = [s[0] - step[2], s[1] - step[3]]
    raise NoConvergence("gap Newton did not reach tolerance")


def construct_shadowing_orbit(map_, A, segments, M: int, rates, r: float,
                              rho_prime: float, tau: int | None = None,
                              mp_digits: int | None = None) -> ShadowingWitness:
    """Glue good segments into one orbit with uniform gap time tau.

    Iteration: z_1 is the endpoint of the first segment; each gap solves for
    w_j on the local unstable plane of z_j whose tau-step image lies on the
    local stable plane of the next base point, and the next endpoint is
    z_{j+1} = g^{tau + n_{j+1}}(w_j).  The glued orbit starts at the pullback
    of the last w.  All orbit arithmetic runs in extended precision: the
    start must be resolved far below float64 for its forward orbit to stay
    in the shadow tube over the whole gluing.  Block defects are verified by
    direct distance evaluation, never assumed.
    """
    segments = [(np.asarray(x, dtype=float), int(n)) for x, n in segments]
    if len(segments) == 0:
        raise ValueError("need at least one segment")
    if tau is None:
        tau = tau0(map_, A, rho_prime)
    N_min = min_segment_length(M, rates, r, tau)
    for _, n in segments:
        if n < N_min:
            raise PreconditionTooShort(
                f"segment length {n} below N(M) = {N_min} at tau = {tau}")
    lengths = [n for _, n in segments]
    k_seg = len(segments)
    total = sum(lengths) + (k_seg - 1) * tau
    l4 = float(A.eigenvalues[3])
    if mp_digits is None:
        mp_digits = int(25 + total * math.log10(l4) + 15)
    old_dps = mp.mp.dps
    mp.mp.dps = mp_digits
    try:
        from .anosov import mp_eigensystem
        _, U, S = mp_eigensystem(A)
        if k_seg == 1:
            y = [mp.mpf(float(v)) for v in segments[0][0]]
        else:
            z = _mp_orbit_step(map_, [mp.mpf(float(v)) for v in segments[0][0]],
                               lengths[0], forward=True)
            w = None
            for j in range(k_seg - 1):
                target = segments[j + 1][0]
                seed = _reach_solution(A, tau, np.array([float(v) for v in z]),
                                       target, rho_prime, margin=1.0)
                if seed is None:
                    raise LeafIntersectionFailure(
                        f"no reachable translate for gap {j} at tau={tau}")
                t_seed, s_seed, _ = seed
                w = _mp_newton_gap(map_, z, target, tau, U, S, t_seed, s_seed,
                                   tol_exp=mp_digits - 10)
                if j + 1 < k_seg - 1:
                    z = _mp_orbit_step(map_, w, tau + lengths[j + 1], forward=True)
            # the last w sits at orbit time m_{k-1} = sum_{i<k} n_i + (k-2) tau
            m_last = sum(lengths[:-1]) + (k_seg - 2) * tau
            y = _mp_orbit_step(map_, w, m_last, forward=False)
        # verify: direct d_{n_j} evaluation of each block against its segment
        # (the segment orbit is also evolved in mp: float orbits drift at the
        # expansion rate and would pollute the defect within ~20 steps)
        defects = []
        cur = list(y)
        for j, (xj, nj) in enumerate(segments):
            if j > 0:
                cur = _mp_orbit_step(map_, cur, tau, forward=True)
            seg_pt = [mp.mpf(float(v)) for v in xj]
            worst = 0.0
            for kstep in range(nj):
                worst = max(worst, float(_mp_torus_distance(cur, seg_pt)))
                if kstep + 1 < nj:
                    cur = map_.mp_apply(cur)
                    seg_pt = map_.mp_apply(seg_pt)
            cur = map_.mp_apply(cur)
            defects.append(worst)
        point = torus.wrap(np.array([float(v) for v in y]))
        return ShadowingWitness(point=point, tau=tau, block_defects=defects,
                                scale=3 * rho_prime, mp_digits=mp_digits)
    finally:
        mp.mp.dps = old_dps


def _mp_torus_distance(x, y) -> mp.mpf:
    total = mp.mpf(0)
    for k in range(4):
        yk = y[k] if isinstance(y[k], mp.mpf) else mp.mpf(float(y[k]))
        d = x[k] - yk
        d = d - mp.nint(d)
        total += d * d
    return mp.sqrt(total)
