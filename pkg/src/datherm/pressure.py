"""Partition sums over orbit segments, pressure at scale, tail entropy,
visit-count collections, and the closed-form obstruction estimate.

Conventions shared by every estimator here:

* Separated sets are built greedily in descending weight order (index
  ascending on ties), so the result is a reproducible lower estimate of the
  supremum.
* Spanning sets are built greedily in ascending weight order; the reported
  value is the smaller of that cover and the separated set reused as a cover
  (a maximal separated set of the candidates is itself spanning), so the
  span/sep inequalities hold exactly for the estimates, not just in the limit.
* Weights are handled in log space; `log_value` is the primary field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import torus
from .errors import DomainError, EmptyCollection


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """Real-valued observable on T^4 with optional regularity metadata.

    `hoelder` is a pair (K, alpha) with |phi(x)-phi(y)| <= K d(x,y)^alpha
    guaranteed analytically; `haar_mean` is the exact mean against the
    uniform measure when known.  Both are None when only the evaluator is
    trusted.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "generic"
    hoelder: Optional[tuple[float, float]] = None
    haar_mean: Optional[float] = None
    name: str = "phi"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def var_bound(self, delta: float) -> Optional[float]:
        """Analytic upper bound for Var(phi, delta), when metadata allows."""
        if self.hoelder is None:
            return None
        K, alpha = self.hoelder
        return K * delta ** alpha

    @staticmethod
    def constant(c: float) -> "Potential":
        cval = float(c)
        return Potential(fn=lambda x: np.full(np.asarray(x).shape[:-1], cval),
                         kind="constant", hoelder=(0.0, 1.0), haar_mean=cval,
                         name=f"const({cval})")

    @staticmethod
    def trig(freqs: np.ndarray, coeffs: np.ndarray,
             phases: np.ndarray | None = None, name: str = "trig") -> "Potential":
        """Sum of c_j cos(2 pi <k_j, x> + theta_j) with integer frequency rows.

        Well defined on the torus; the Lipschitz constant sum |c_j| 2 pi |k_j|
        is carried as exact metadata.
        """
        k = np.atleast_2d(np.asarray(freqs, dtype=float))
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        th = np.zeros(len(c)) if phases is None else np.asarray(phases, dtype=float)
        if not np.all(k == np.round(k)):
            raise ValueError("frequencies must be integer vectors")
        lip = float(np.sum(np.abs(c) * 2 * np.pi * np.linalg.norm(k, axis=1)))
        zero_rows = np.all(k == 0, axis=1)
        mean = float(np.sum(c[zero_rows] * np.cos(th[zero_rows])))

        def fn(x):
            ang = 2 * np.pi * (np.asarray(x) @ k.T) + th
            return np.cos(ang) @ c

        return Potential(fn=fn, kind="trig", hoelder=(lip, 1.0),
                         haar_mean=mean, name=name)

    def shifted(self, c: float) -> "Potential":
        base = self
        return Potential(fn=lambda x: base(x) + c, kind=base.kind,
                         hoelder=base.hoelder,
                         haar_mean=None if base.haar_mean is None else base.haar_mean + c,
                         name=f"{base.name}+{c}")


def birkhoff_sum(map_, phi: Potential, x: np.ndarray, n: int) -> np.ndarray:
    """S_n phi(x) = sum of phi over the first n orbit points; batched."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = torus.wrap(np.asarray(x, dtype=float))
    total = phi(x).astype(float)
    for _ in range(n - 1):
        x = map_(x)
        total = total + phi(x)
    return total


def var_empirical(phi: Potential, scale: float, rng: np.random.Generator,
                  n_pairs: int = 100_000) -> float:
    """Sampled oscillation sup |phi(x)-phi(y)| over pairs with d(x,y) < scale."""
    x = rng.random((n_pairs, 4))
    u = rng.normal(size=(n_pairs, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    radii = scale * rng.random(n_pairs) ** 0.25     # bias toward the shell
    y = torus.wrap(x + u * radii[:, None])
    return float(np.max(np.abs(phi(x) - phi(y))))


def var_estimate(phi: Potential, scale: float, rng: np.random.Generator,
                 n_pairs: int = 100_000) -> float:
    """Conservative Var(phi, scale): the larger of sampling and metadata."""
    v = var_empirical(phi, scale, rng, n_pairs)
    vb = phi.var_bound(scale)
    return v if vb is None else max(v, vb)


# ---------------------------------------------------------------------------
# collections of orbit segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Collection:
    """A set of orbit segments, by explicit lists or by a membership predicate.

    The predicate receives (map_, points (N,4), n) and returns a boolean mask:
    which (points[i], n) belong to the collection.
    """

    predicate: Optional[Callable[[object, np.ndarray, int], np.ndarray]] = None
    explicit: Optional[dict[int, np.ndarray]] = None
    name: str = "D"

    @staticmethod
    def full() -> "Collection":
        return Collection(predicate=lambda m, pts, n: np.ones(len(pts), bool),
                          name="all")

    @staticmethod
    def from_points(points_by_n: dict[int, np.ndarray], name: str = "explicit") -> "Collection":
        return Collection(explicit={int(n): np.atleast_2d(np.asarray(p, float))
                                    for n, p in points_by_n.items()}, name=name)

    def candidates(self, map_, n: int, grid_points: np.ndarray) -> np.ndarray:
        """Initial points of length-n members among the given candidates."""
        if self.explicit is not None:
            return self.explicit.get(n, np.empty((0, 4)))
        mask = np.asarray(self.predicate(map_, grid_points, n), dtype=bool)
        return grid_points[mask]


def bad_collection(map_, q: np.ndarray, radius: float, r: float) -> Collection:
    """Orbit segments spending less than an r-fraction outside B(q, radius).

    Membership is an exact Birkhoff count of the indicator of the complement
    of the ball.
    """
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    q = np.asarray(q, dtype=float)

    def pred(m, pts, n):
        x = torus.wrap(np.asarray(pts, dtype=float))
        visits = (torus.distance(x, q) >= radius).astype(np.int64)
        for _ in range(n - 1):
            x = m(x)
            visits += torus.distance(x, q) >= radius
        return visits < n * r

    return Collection(predicate=pred, name=f"visits(q,r={r})")


# ---------------------------------------------------------------------------
# partition sums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionSumResult:
    n: int
    scale: float
    log_value: float
    set_size: int
    estimator: str               # 'separated-greedy' or 'spanning-cover'
    mesh: float
    n_candidates: int
    saturated: bool = False      # separated set nearly exhausted the candidates
    bias: str = "lower"          # bias direction of the estimate

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))


def _orbit_stack(map_, pts: np.ndarray, n: int) -> np.ndarray:
    """(n, N, 4) forward orbits of a batch of points."""
    out = np.empty((n, len(pts), 4))
    x = torus.wrap(np.asarray(pts, dtype=float))
    out[0] = x
    for k in range(1, n):
        x = map_(x)
        out[k] = x
    return out


def _dn_to_selected(orb: np.ndarray, sel_orbits: np.ndarray) -> np.ndarray:
    """d_n between one orbit (n,4) and many (n,K,4): max over time of distance."""
    d = torus.frac_delta(orb[:, None, :], sel_orbits)
    return np.sqrt((d * d).sum(axis=-1)).max(axis=0)


class _CellIndex:
    """Spatial hash on time-0 coordinates for separated-set pruning.

    Two segments can only fail (n, eps)-separation if their starting points
    are within eps, so candidate checks are restricted to the 3^4
    neighbouring cells of width >= eps.
    """

    def __init__(self, eps: float):
        self.ncell = max(1, int(np.floor(1.0 / eps)))
        self.cells: dict[tuple, list[int]] = {}
        offs = np.stack(np.meshgrid(*([np.array([-1, 0, 1])] * 4),
                                    indexing="ij"), axis=-1).reshape(-1, 4)
        self._offs = offs

    def key(self, x: np.ndarray) -> np.ndarray:
        return np.minimum((np.asarray(x) * self.ncell).astype(np.int64),
                          self.ncell - 1)

    def neighbors(self, x: np.ndarray) -> list[int]:
        k = self.key(x)
        out: list[int] = []
        for off in self._offs:
            cell = tuple((k + off) % self.ncell)
            out.extend(self.cells.get(cell, ()))
        return out

    def add(self, x: np.ndarray, idx: int) -> None:
        self.cells.setdefault(tuple(self.key(x)), []).append(idx)


def _greedy_separated(orbits: np.ndarray, logw: np.ndarray, eps: float) -> np.ndarray:
    """Indices of a maximal (n, eps)-separated subset, greedy by weight."""
    n, N, _ = orbits.shape
    order = np.lexsort((np.arange(N), -logw))
    index = _CellIndex(eps)
    sel: list[int] = []
    sel_orb = np.empty((n, N, 4))
    for i in order:
        nb = index.neighbors(orbits[0, i])
        if nb:
            d = _dn_to_selected(orbits[:, i], sel_orb[:, nb])
            if np.min(d) < eps:
                continue
        index.add(orbits[0, i], len(sel))
        sel_orb[:, len(sel)] = orbits[:, i]
        sel.append(i)
    return np.asarray(sel, dtype=np.int64)


def _greedy_cover(orbits: np.ndarray, logw: np.ndarray, delta: float) -> np.ndarray:
    """Indices of centers covering every candidate within d_n < delta,
    chosen greedily in ascending weight order."""
    n, N, _ = orbits.shape
    order = np.lexsort((np.arange(N), logw))
    covered = np.zeros(N, dtype=bool)
    centers: list[int] = []
    for i in order:
        if covered[i]:
            continue
        centers.append(i)
        alive = np.flatnonzero(~covered)
        d = _dn_to_selected(orbits[:, i], orbits[:, alive])
        covered[alive[d < delta]] = True
    return np.asarray(centers, dtype=np.int64)


def _lattice_difference_set(lin_map, grid, n: int, eps: float) -> np.ndarray:
    """Lattice vectors v != 0 with d_n(0, v) < eps, as (K, 4) integer offsets.

    Valid for integer matrices on a uniform lattice: d_n between two lattice
    points depends only on their difference, which stays on the lattice.
    """
    m = grid.m
    alive_pts = []
    for block in grid.iter_blocks():
        d = torus.distance(block, np.zeros(4))
        keep = (d < eps) & (d > 0)
        if np.any(keep):
            alive_pts.append(block[keep])
    if not alive_pts:
        return np.empty((0, 4), dtype=np.int64)
    pts = np.concatenate(alive_pts)
    base = pts.copy()
    for _ in range(n - 1):
        pts = lin_map(pts)
        keep = torus.distance(pts, np.zeros(4)) < eps
        pts, base = pts[keep], base[keep]
        if len(base) == 0:
            break
    return np.round(base * m).astype(np.int64) % m


def _lattice_greedy_separated(lin_map, grid, logw: np.ndarray, n: int,
                              eps: float) -> np.ndarray:
    """Greedy separated subset of the full lattice via difference-set blocking.

    Equivalent to the generic greedy (same order, same conflicts) but runs in
    time proportional to the number of blocked points.
    """
    m = grid.m
    offsets = _lattice_difference_set(lin_map, grid, n, eps)
    order = np.lexsort((np.arange(grid.count), -logw))
    blocked = np.zeros(grid.count, dtype=bool)
    strides = np.array([m ** 3, m ** 2, m, 1], dtype=np.int64)
    sel: list[int] = []
    if len(offsets) == 0:
        return order  # every pair separated: everything is selected
    for i in order:
        if blocked[i]:
            continue
        sel.append(i)
        digits = np.array([(i // strides[k]) % m for k in range(4)], dtype=np.int64)
        nb = (digits + offsets) % m
        blocked[nb @ strides] = True
    return np.asarray(sel, dtype=np.int64)


def _candidate_set(map_, D: Collection, n: int, grid, block_size: int):
    """Candidate initial points of D_n on the grid (or the explicit list)."""
    if D.explicit is not None:
        pts = D.candidates(map_, n, np.empty((0, 4)))
        return pts, False
    full_lattice = D.name == "all"
    picked = []
    for block in grid.iter_blocks(block_size):
        mask = np.asarray(D.predicate(map_, block, n), dtype=bool)
        if full_lattice and not mask.all():
            full_lattice = False
        if np.any(mask):
            picked.append(block[mask])
    pts = np.concatenate(picked) if picked else np.empty((0, 4))
    return pts, full_lattice


def _log_weights(map_, phi: Potential, pts: np.ndarray, n: int) -> np.ndarray:
    return birkhoff_sum(map_, phi, pts, n)


def lambda_sep(map_, D: Collection, phi: Potential, n: int, eps: float,
               grid, block_size: int = 1 << 16) -> PartitionSumResult:
    """Greedy weighted (n, eps)-separated partition sum over D_n on the grid.

    Deterministic lower estimate of the separated-set supremum: candidates are
    ranked by e^{S_n phi} descending and kept if separated from everything
    already chosen.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lattice_whole = (D.explicit is None and D.name == "all"
                     and getattr(map_, "preserves_lattice", lambda m: False)(grid.m))
    if lattice_whole:
        logw = np.empty(grid.count)
        pos = 0
        for block in grid.iter_blocks(block_size):
            logw[pos:pos + len(block)] = _log_weights(map_, phi, block, n)
            pos += len(block)
        sel = _lattice_greedy_separated(map_, grid, logw, n, eps)
        log_value = float(logsumexp(logw[sel]))
        n_cand = grid.count
        size = len(sel)
    else:
        pts, _ = _candidate_set(map_, D, n, grid, block_size)
        if len(pts) == 0:
            raise EmptyCollection(f"{D.name} has no length-{n} members on this grid")
        orbits = _orbit_stack(map_, pts, n)
        logw = phi(orbits).sum(axis=0)
        sel = _greedy_separated(orbits, logw, eps)
        log_value = float(logsumexp(logw[sel]))
        n_cand = len(pts)
        size = len(sel)
    return PartitionSumResult(
        n=n, scale=eps, log_value=log_value, set_size=size,
        estimator="separated-greedy", mesh=grid.mesh, n_candidates=n_cand,
        saturated=size >= 0.95 * n_cand, bias="lower")


def lambda_span(map_, D: Collection, phi: Potential, n: int, delta: float,
                grid, block_size: int = 1 << 16) -> PartitionSumResult:
    """Greedy spanning-cover partition sum over D_n on the grid.

    Upper estimate of the spanning infimum.  The reported value is the
    smaller of the ascending-weight greedy cover and the maximal separated
    set reused as a cover; the latter guarantees span(delta) <= sep(delta)
    exactly for the estimates.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pts, _ = _candidate_set(map_, D, n, grid, block_size)
    if len(pts) == 0:
        raise EmptyCollection(f"{D.name} has no length-{n} members on this grid")
    orbits = _orbit_stack(map_, pts, n)
    logw = phi(orbits).sum(axis=0)
    cover = _greedy_cover(orbits, logw, delta)
    sep = _greedy_separated(orbits, logw, delta)
    log_cover = float(logsumexp(logw[cover]))
    log_sep = float(logsumexp(logw[sep]))
    if log_cover <= log_sep:
        chosen, log_value = cover, log_cover
    else:
        chosen, log_value = sep, log_sep
    return PartitionSumResult(
        n=n, scale=delta, log_value=log_value, set_size=len(chosen),
        estimator="spanning-cover", mesh=grid.mesh, n_candidates=len(pts),
        bias="upper")


# ---------------------------------------------------------------------------
# pressure at scale
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PressureEstimate:
    slope: float                 # least-squares slope of log Lambda_n vs n
    cesaro: float                # log Lambda at the largest n, divided by n
    estimate: float              # max of the two; replaces the limsup
    results: tuple[PartitionSumResult, ...] = field(default=())

    @property
    def any_saturated(self) -> bool:
        return any(r.saturated for r in self.results)


def pressure_at_scale(map_, D: Collection, phi: Potential, eps: float,
                      n_range, grid, block_size: int = 1 << 16) -> PressureEstimate:
    """Growth rate of the separated partition sums over a finite n-range.

    The limsup of (1/n) log Lambda_n is replaced by the max of the
    least-squares slope and the last Cesaro value; both are reported, and
    per-n results carry a saturation flag when the separated set exhausted
    the grid (the estimate is then censored from below).
    """
    ns = [int(n) for n in n_range]
    if len(ns) < 3:
        raise ValueError("n_range needs at least three values")
    results = tuple(lambda_sep(map_, D, phi, n, eps, grid, block_size) for n in ns)
    ys = np.array([r.log_value for r in results])
    xs = np.array(ns, dtype=float)
    slope = float(np.polyfit(xs, ys, 1)[0])
    cesaro = float(ys[-1] / xs[-1])
    return PressureEstimate(slope=slope, cesaro=cesaro,
                            estimate=max(slope, cesaro), results=results)


# ---------------------------------------------------------------------------
# binary entropy and the closed-form obstruction estimate
# ---------------------------------------------------------------------------

def binary_entropy(r: float) -> float:
    """H(r) = -r log r - (1-r) log(1-r), with H(0) = H(1) = 0 by continuity."""
    if r < 0.0 or r > 1.0:
        raise DomainError(f"binary entropy needs r in [0, 1], got {r}")
    if r == 0.0 or r == 1.0:
        return 0.0
    return float(-r * math.log(r) - (1.0 - r) * math.log(1.0 - r))


def core_estimate(L: float, h: float, r: float, sup_phi_ball: float,
                  sup_phi_global: float, tail_bound: float) -> float:
    """Closed-form upper bound for the pressure of the visit-starved segments:

        tail + (1-r) sup_ball phi + r (sup phi + h + log L) + H(2r).
    """
    if not 0 < r:
        raise DomainError("r must be positive")
    if 2 * r > 1:
        raise DomainError(f"need 2r <= 1 for the counting term, got r={r}")
    return (tail_bound + (1.0 - r) * sup_phi_ball
            + r * (sup_phi_global + h + math.log(L)) + binary_entropy(2 * r))


# ---------------------------------------------------------------------------
# tail entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailEntropyResult:
    estimate: float
    per_point: tuple[float, ...]
    gamma_sizes: tuple[int, ...]
    window: int


def _two_sided_survivors(map_, x: np.ndarray, eps: float, window: int,
                         candidates: np.ndarray) -> np.ndarray:
    """Candidates whose orbit stays eps-close to that of x for |k| <= window."""
    keep = torus.distance(candidates, x) < eps
    cand = candidates[keep]
    fx, fc = x.copy(), cand.copy()
    for _ in range(window):
        fx, fc = map_(fx), map_(fc)
        alive = torus.distance(fc, fx) < eps
        fc, cand = fc[alive], cand[alive]
    bx, bc = x.copy(), cand.copy()
    for _ in range(window):
        bx, bc = map_.inverse(bx), map_.inverse(bc)
        alive = torus.distance(bc, bx) < eps
        bc, cand = bc[alive], cand[alive]
    return cand


def tail_entropy_estimate(map_, xs: np.ndarray, eps: float, delta: float,
                          n_range, window: int = 20,
                          submesh: int = 6) -> TailEntropyResult:
    """Spanning-count growth inside empirical infinite Bowen balls.

    Gamma_eps(x) is approximated by local lattice points whose two-sided
    orbit over +-window stays eps-close to the orbit of x; the growth of
    (n, delta)-spanning counts of that set then estimates the entropy hidden
    below scale eps.  Expansive maps give the singleton and estimate 0.
    """
    if not delta < eps:
        raise ValueError("delta must be smaller than eps")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    per, sizes = [], []
    ns = [int(n) for n in n_range]
    for x in xs:
        local = torus.ball_cluster(x, eps, submesh)
        gamma = _two_sided_survivors(map_, x, eps, window, local)
        sizes.append(len(gamma))
        if len(gamma) <= 1:
            per.append(0.0)
            continue
        counts = []
        orbits_full = _orbit_stack(map_, gamma, max(ns))
        for n in ns:
            sel = _greedy_cover(orbits_full[:n], np.zeros(len(gamma)), delta)
            counts.append(max(1, len(sel)))
        ys = np.log(counts)
        slope = float(np.polyfit(np.array(ns, float), ys, 1)[0]) if len(ns) >= 2 \
            else 0.0
        cesaro = float(ys[-1] / ns[-1])
        per.append(max(0.0, slope, cesaro) if len(gamma) > 1 else 0.0)
    return TailEntropyResult(estimate=float(max(per)), per_point=tuple(per),
                             gamma_sizes=tuple(sizes), window=window)


# ---------------------------------------------------------------------------
# Katok-style covering estimator
# ---------------------------------------------------------------------------

def katok_sn(map_, phi: Potential, delta: float, support: np.ndarray,
             alpha: float, n: int) -> float:
    """Greedy minimal weight of Bowen-ball centers covering an alpha-fraction
    of an empirical measure supported on the given points.

    Centers are chosen from the support in ascending weight order until the
    covered fraction reaches alpha; closed balls (d_n <= delta) count.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    support = np.atleast_2d(np.asarray(support, dtype=float))
    if len(support) == 0:
        raise EmptyCollection("empty support")
    orbits = _orbit_stack(map_, support, n)
    logw = phi(orbits).sum(axis=0)
    order = np.lexsort((np.arange(len(support)), logw))
    covered = np.zeros(len(support), dtype=bool)
    need = alpha * len(support)
    total = 0.0
    for i in order:
        if covered.sum() >= need:
            break
        d = _dn_to_selected(orbits[:, i], orbits)
        newly = (d <= delta) & ~covered
        if not np.any(newly):
            continue
        covered |= newly
        total += math.exp(logw[i])
    return float(total)
