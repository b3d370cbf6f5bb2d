"""The linear hyperbolic model on T^4: integer matrices with split spectrum,
invariant eigenplanes, shadowing, and the empirical growth constant.

The spectrum we require is four distinct real eigenvalues
0 < l1 < l2 < 1/3 < 3 < l3 < l4 with product 1, so the matrix lies in
SL(4, Z), contracts a 2-plane and expands a 2-plane, and both rates are
uniformly bounded away from 1.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from . import torus
from .errors import JumpTooLarge, NotFound
from .planes import Plane2, kappa_bar


class LinearTorusMap:
    """x -> A x (mod 1) for an integer matrix A; exact derivative everywhere."""

    def __init__(self, entries: np.ndarray):
        A = np.asarray(entries)
        if A.shape != (4, 4) or not np.all(A == np.round(A)):
            raise ValueError("entries must be a 4x4 integer matrix")
        self.entries = A.astype(np.int64)
        if round(np.linalg.det(self.entries.astype(float))) != 1:
            raise ValueError("matrix must have determinant 1")
        self._A = self.entries.astype(float)
        self._Ainv = np.round(np.linalg.inv(self._A)).astype(np.int64).astype(float)
        self.map_id = "linear:" + ",".join(str(v) for v in self.entries.ravel())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return torus.wrap(np.asarray(x) @ self._A.T)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return torus.wrap(np.asarray(y) @ self._Ainv.T)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            return self._A.copy()
        return np.broadcast_to(self._A, x.shape[:-1] + (4, 4)).copy()

    def inverse_jacobian(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.ndim == 1:
            return self._Ainv.copy()
        return np.broadcast_to(self._Ainv, y.shape[:-1] + (4, 4)).copy()

    # lattice fast paths -------------------------------------------------
    def preserves_lattice(self, m: int) -> bool:
        """Integer matrices map the (1/m)-lattice to itself for every m."""
        return True

    # high-precision backend ---------------------------------------------
    def mp_apply(self, x):
        return _mp_wrap([_mp_dot(self.entries[i], x) for i in range(4)])

    def mp_inverse(self, y):
        Ainv = np.round(self._Ainv).astype(np.int64)
        return _mp_wrap([_mp_dot(Ainv[i], y) for i in range(4)])

    def mp_jacobian(self, x):
        return mp.matrix(self.entries.tolist())


def _mp_dot(row: np.ndarray, x) -> mp.mpf:
    return mp.fsum(int(row[j]) * x[j] for j in range(4))


def _mp_wrap(x):
    return [xi - mp.floor(xi) for xi in x]


# ---------------------------------------------------------------------------
# spectrum search
# ---------------------------------------------------------------------------

def _companion(a: int, b: int, c: int) -> np.ndarray:
    """Companion matrix of x^4 + a x^3 + b x^2 + c x + 1 (determinant 1)."""
    return np.array([
        [0, 0, 0, -1],
        [1, 0, 0, -c],
        [0, 1, 0, -b],
        [0, 0, 1, -a],
    ], dtype=np.int64)


def _poly_eval(coeffs, x: float) -> float:
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _bisect_root(coeffs, lo: float, hi: float, width: float) -> tuple[float, float]:
    flo = _poly_eval(coeffs, lo)
    fhi = _poly_eval(coeffs, hi)
    if flo == 0.0:
        return lo, lo
    if fhi == 0.0:
        return hi, hi
    if flo * fhi > 0:
        raise ValueError("not a bracket")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        fm = _poly_eval(coeffs, mid)
        if fm == 0.0:
            return mid, mid
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return lo, hi


def verify_spectrum(a: int, b: int, c: int,
                    width: float = 1e-11) -> np.ndarray | None:
    """Certified root brackets for x^4+ax^3+bx^2+cx+1 under the split chain.

    Returns a (4, 2) array of disjoint sign-change brackets of the requested
    width with 0 < l1 < l2 < 1/3 < 3 < l3 < l4 certified at the bracket
    endpoints, or None if the polynomial fails any requirement.
    """
    coeffs = (1.0, float(a), float(b), float(c), 1.0)
    roots = np.roots(coeffs)
    if np.max(np.abs(roots.imag)) > 1e-9:
        return None
    lam = np.sort(roots.real)
    # cheap screen with slack; the brackets below do the real certification
    if not (0 < lam[0] < lam[1] < 1 / 3 + 1e-6 and 3 - 1e-6 < lam[2] < lam[3]):
        return None
    brackets = []
    for r in lam:
        # grow a sign-change bracket around the approximate root
        for w0 in (1e-6, 1e-4, 1e-3, 1e-2):
            lo, hi = r - w0, r + w0
            if _poly_eval(coeffs, lo) * _poly_eval(coeffs, hi) < 0:
                brackets.append(_bisect_root(coeffs, lo, hi, width))
                break
        else:
            return None  # near-double root; reject
    br = np.array(brackets)
    ok = (
        br[0, 0] > 0.0
        and br[0, 1] < br[1, 0]
        and br[1, 1] < 1 / 3
        and br[2, 0] > 3.0
        and br[2, 1] < br[3, 0]
    )
    return br if ok else None


def _eig_condition(M: np.ndarray) -> float:
    lam, V = np.linalg.eig(M.astype(float))
    if np.max(np.abs(lam.imag)) > 1e-9:
        return np.inf
    V = V.real[:, np.argsort(lam.real)]
    return float(np.linalg.cond(V / np.linalg.norm(V, axis=0)))


def _condition_conjugate(entries: np.ndarray, max_rounds: int = 200,
                         entry_cap: int = 500) -> np.ndarray:
    """Unimodular conjugation improving the eigenbasis conditioning.

    Companion matrices have nearly parallel eigenvectors within each invariant
    plane (Vandermonde structure), which inflates every derivative estimate
    downstream.  A deterministic greedy walk over elementary shears
    E_{ij}(+-1) -> E M E^{-1} typically reaches a symmetric representative
    with an orthonormal eigenbasis.  The characteristic polynomial is
    unchanged.
    """
    moves = []
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            for s in (1, -1):
                E = np.eye(4, dtype=np.int64)
                E[i, j] = s
                Einv = np.eye(4, dtype=np.int64)
                Einv[i, j] = -s
                moves.append((E, Einv))
    cur = entries.copy()
    best = _eig_condition(cur)
    for _ in range(max_rounds):
        improved = False
        for E, Einv in moves:
            cand = E @ cur @ Einv
            if np.abs(cand).max() >= entry_cap:
                continue
            c = _eig_condition(cand)
            if c < best - 1e-12:
                best, cur = c, cand
                improved = True
                break
        if not improved:
            break
    return cur


def find_matrix(search_bound: int) -> "AnosovMatrix":
    """Deterministic search for an SL(4,Z) matrix with the split spectrum.

    Enumerates x^4 + a x^3 + b x^2 + c x + 1 with |a|, |c| <= search_bound and
    |b| <= 2 * search_bound in lexicographic (a, b, c) order, takes the first
    polynomial whose certified roots obey the chain, and returns a
    conditioning-optimized integer representative of its similarity class.
    The middle coefficient needs the wider box: for any admissible spectrum
    b = l3*l4 + l1*l2 + (l1+l2)(l3+l4) > 13, so no solution has |b| <= 12.
    """
    if search_bound < 1:
        raise ValueError("search_bound must be >= 1")
    B = search_bound
    for a, b, c in itertools.product(
            range(-B, B + 1), range(-2 * B, 2 * B + 1), range(-B, B + 1)):
        br = verify_spectrum(a, b, c)
        if br is not None:
            entries = _condition_conjugate(_companion(a, b, c))
            return AnosovMatrix.from_entries(entries, (a, b, c), br)
    raise NotFound(f"no admissible matrix with search_bound={search_bound}")


# ---------------------------------------------------------------------------
# verified matrix with derived data
# ---------------------------------------------------------------------------

def _refine_eigenvector(A: np.ndarray, lam: float) -> np.ndarray:
    """Unit eigenvector as the smallest right singular vector of A - lam I."""
    _, _, vt = np.linalg.svd(A - lam * np.eye(4))
    v = vt[-1]
    j = int(np.argmax(np.abs(v)))
    return v * np.sign(v[j])  # sign fixed for determinism


@dataclass(frozen=True)
class AnosovMatrix:
    """Integer matrix with certified split spectrum and derived geometry."""

    entries: np.ndarray
    poly: tuple[int, int, int]          # (a, b, c) of the characteristic poly
    eigenvalues: np.ndarray             # ascending, midpoints of the brackets
    brackets: np.ndarray                # (4, 2) certified root brackets
    eigenvectors: np.ndarray            # columns, same order as eigenvalues
    Fs: Plane2 = field(init=False)
    Fu: Plane2 = field(init=False)

    def __post_init__(self):
        V = self.eigenvectors
        object.__setattr__(self, "Fs", Plane2.from_span(V[:, :2]))
        object.__setattr__(self, "Fu", Plane2.from_span(V[:, 2:]))

    @classmethod
    def from_entries(cls, entries: np.ndarray, poly: tuple[int, int, int],
                     brackets: np.ndarray) -> "AnosovMatrix":
        lam = brackets.mean(axis=1)
        A = entries.astype(float)
        V = np.column_stack([_refine_eigenvector(A, l) for l in lam])
        return cls(entries=np.asarray(entries, dtype=np.int64), poly=tuple(poly),
                   eigenvalues=lam, brackets=np.asarray(brackets, dtype=float),
                   eigenvectors=V)

    @classmethod
    def from_companion(cls, a: int, b: int, c: int,
                       brackets: np.ndarray | None = None) -> "AnosovMatrix":
        if brackets is None:
            brackets = verify_spectrum(a, b, c)
            if brackets is None:
                raise NotFound(f"polynomial (a,b,c)=({a},{b},{c}) fails the spectrum chain")
        return cls.from_entries(_companion(a, b, c), (a, b, c), brackets)

    @property
    def map(self) -> LinearTorusMap:
        m = LinearTorusMap(self.entries)
        m.A = self  # plane seeds and cone checks read the model off the map
        return m

    @property
    def h_top(self) -> float:
        """log l3 + log l4, exact for the linear model."""
        return float(np.log(self.eigenvalues[2]) + np.log(self.eigenvalues[3]))

    @property
    def kappa_bar(self) -> float:
        return kappa_bar(self.Fs, self.Fu)

    def shadowing_constant(self) -> float:
        """C with eta/C-pseudo-orbits eta-shadowed, from the linear series bound."""
        l2, l3 = self.eigenvalues[1], self.eigenvalues[2]
        return self.kappa_bar * max(1.0 / (1.0 - l2), 1.0 / (1.0 - 1.0 / l3))

    def default_eta(self, cap: float = 0.125) -> float:
        """Expansivity-scale parameter: a quarter of the injectivity scale,
        capped by the caller."""
        return min(0.25 * 0.5, cap)

    def fixed_points(self) -> np.ndarray:
        """All fixed points on T^4: solutions of (A - I) x = 0 mod Z^4."""
        M = self.entries.astype(float) - np.eye(4)
        n_fix = abs(round(np.linalg.det(M)))
        if n_fix == 0:
            raise ValueError("eigenvalue 1: fixed points not isolated")
        Minv = np.linalg.inv(M)
        # x = Minv k must land in [0,1)^4; enumerate k in the image box of the cell
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=4))) @ M.T
        lo = np.floor(corners.min(axis=0)).astype(int) - 1
        hi = np.ceil(corners.max(axis=0)).astype(int) + 1
        ranges = [np.arange(lo[i], hi[i] + 1) for i in range(4)]
        ks = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 4)
        xs = ks.astype(float) @ Minv.T
        keep = np.all((xs > -1e-12) & (xs < 1 - 1e-12), axis=1)
        pts = torus.wrap(xs[keep])
        # dedupe (corner duplicates from the tolerance band)
        key = np.round(pts * 1e9).astype(np.int64)
        _, idx = np.unique(key, axis=0, return_index=True)
        pts = pts[np.sort(idx)]
        if len(pts) != n_fix:
            raise RuntimeError(f"expected {n_fix} fixed points, found {len(pts)}")
        order = np.lexsort(pts.T[::-1])
        return pts[order]

    def to_json(self) -> dict:
        return {
            "entries": self.entries.tolist(),
            "poly": list(self.poly),
            "eigenvalues": self.eigenvalues.tolist(),
            "brackets": self.brackets.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "kappa_bar": self.kappa_bar,
            "h": self.h_top,
            "C": self.shadowing_constant(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AnosovMatrix":
        return cls(
            entries=np.asarray(doc["entries"], dtype=np.int64),
            poly=tuple(doc["poly"]),
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
            brackets=np.asarray(doc["brackets"], dtype=float),
            eigenvectors=np.asarray(doc["eigenvectors"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "AnosovMatrix":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# shadowing and the semiconjugacy to perturbations
# ---------------------------------------------------------------------------

def mp_eigensystem(A: AnosovMatrix):
    """Eigenvalues and orthonormal invariant-plane frames at working precision.

    Float64 frames limit the purity of in-plane offsets to ~1e-16, which the
    complementary expansion amplifies catastrophically over long pullbacks;
    the gluing construction therefore refines the spectrum (Newton on the
    integer characteristic polynomial) and the eigenvectors (shifted inverse
    iteration) to the current mpmath precision.

    Returns (eigenvalues, Fu frame, Fs frame) with mp.matrix frames.
    """
    a, b, c = A.poly
    lams = []
    for lam0 in A.eigenvalues:
        lam = mp.mpf(float(lam0))
        for _ in range(int(np.log2(max(mp.mp.dps, 16))) + 3):
            p = (((lam + a) * lam + b) * lam + c) * lam + 1
            dp = ((4 * lam + 3 * a) * lam + 2 * b) * lam + c
            lam = lam - p / dp
        lams.append(lam)
    Amp = mp.matrix(A.entries.tolist())
    shift = mp.mpf(10) ** (-(mp.mp.dps - 8))
    vecs = []
    for lam, v0 in zip(lams, A.eigenvectors.T):
        v = mp.matrix([mp.mpf(float(x)) for x in v0])
        for _ in range(2):
            v = mp.lu_solve(Amp - (lam + shift) * mp.eye(4), v)
            nrm = mp.sqrt(mp.fsum(v[i] ** 2 for i in range(4)))
            v = v / nrm
        vecs.append(v)

    def frame(i: int, j: int):
        u1, u2 = vecs[i], vecs[j]
        d = mp.fsum(u1[k] * u2[k] for k in range(4))
        w = [u2[k] - d * u1[k] for k in range(4)]
        n2 = mp.sqrt(mp.fsum(x * x for x in w))
        F = mp.matrix(4, 2)
        for k in range(4):
            F[k, 0] = u1[k]
            F[k, 1] = w[k] / n2
        return F

    return lams, frame(2, 3), frame(0, 1)


def shadow(A: AnosovMatrix, pseudo_orbit: np.ndarray, center: int | None = None,
           max_jump: float | None = None) -> np.ndarray:
    """Orbit point of the linear map whose orbit tracks a pseudo-orbit.

    pseudo_orbit is an (m, 4) array of consecutive points; the returned y
    satisfies  f_A^k y ~ pseudo_orbit[center + k]  with defect bounded by the
    geometric correction series.  The per-step defects e_j are split into the
    contracting eigenplane (summed forward over the past) and the expanding
    eigenplane (summed backward over the future), which keeps every weight
    geometrically small.  Truncation error is l2^T + l3^{-T} for the distance
    T to the nearer end of the pseudo-orbit.
    """
    p = np.asarray(pseudo_orbit, dtype=float)
    if p.ndim != 2 or p.shape[1] != 4 or len(p) < 1:
        raise ValueError("pseudo_orbit must be a nonempty (m, 4) array")
    if center is None:
        center = (len(p) - 1) // 2
    Af = A.entries.astype(float)
    e = torus.frac_delta(p[1:], p[:-1] @ Af.T)        # (m-1, 4) per-step defects
    if len(e):
        jumps = np.linalg.norm(e, axis=1)
        if max_jump is not None and np.max(jumps) >= max_jump:
            raise JumpTooLarge(
                f"pseudo-orbit jump {np.max(jumps):.3e} >= threshold {max_jump:.3e}")
    V = A.eigenvectors
    coords = e @ np.linalg.inv(V).T                   # eigen-coordinates of defects
    lam = A.eigenvalues
    corr = np.zeros(4)
    for i in (0, 1):      # contracting directions: forward sum over j < center
        js = np.arange(0, center)
        if len(js):
            corr -= np.sum(lam[i] ** (center - 1 - js) * coords[js, i]) * V[:, i]
    for i in (2, 3):      # expanding directions: backward sum over j >= center
        js = np.arange(center, len(e))
        if len(js):
            corr += np.sum(lam[i] ** (-(js - center + 1.0)) * coords[js, i]) * V[:, i]
    return torus.wrap(p[center] + corr)


def semiconjugacy(A: AnosovMatrix, g, x: np.ndarray, window: int = 24,
                  max_jump: float | None = None) -> np.ndarray:
    """pi(x): the point whose linear orbit shadows the two-sided g-orbit of x.

    Caller guarantees d_C0(f_A, g) < eta / C; the jump check is then a
    consistency assertion, not a proof.
    """
    x = torus.wrap(np.asarray(x, dtype=float))
    pts = [x]
    fwd = x
    for _ in range(window):
        fwd = g(fwd)
        pts.append(fwd)
    bwd = x
    back = []
    for _ in range(window):
        bwd = g.inverse(bwd)
        back.append(bwd)
    p = np.array(back[::-1] + pts)
    return shadow(A, p, center=window, max_jump=max_jump)


@dataclass(frozen=True)
class ShadowingData:
    """Constants of the linear model used by every downstream estimate."""

    C: float          # shadowing constant
    eta: float        # 3*eta is used as the expansivity scale
    L: float          # empirical growth constant (lower estimate, flagged)
    h: float          # topological entropy log l3 + log l4, exact

    def to_json(self) -> dict:
        return {"C": self.C, "eta": self.eta, "h": self.h,
                "L": self.L, "L_provenance": "empirical"}


def gibbs_L(A: AnosovMatrix, eta: float, n_max: int, grid,
            block_size: int = 1 << 16) -> float:
    """Empirical lower estimate of the growth constant L.

    Greedy separated-set counts at scale eta give
    max over 1 <= n <= n_max of  Lambda_n * exp(-n h).
    This is a lower bound for any valid L, never a certificate; reports must
    keep the 'empirical' flag.
    """
    from . import pressure  # local import: pressure depends only on torus

    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    h = A.h_top
    fmap = A.map
    best = -np.inf
    for n in range(1, n_max + 1):
        res = pressure.lambda_sep(fmap, pressure.Collection.full(),
                                  pressure.Potential.constant(0.0),
                                  n, eta, grid, block_size=block_size)
        best = max(best, res.log_value - n * h)
    return float(np.exp(best))
