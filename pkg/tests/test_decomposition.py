import numpy as np
import pytest

from datherm import decomposition as dec
from datherm import torus
from datherm.errors import NotFound, NotGood, PreconditionTooShort
from datherm.planes import Plane2


@pytest.fixture(scope="module")
def icfg(g, params, A):
    kappa = 2 * A.kappa_bar
    return dec.IndicatorConfig(q=params.q, qprime=params.qprime,
                               radius=params.rho_second(kappa) + params.rho,
                               r=0.1)


class ScriptedPath:
    """Map stub that walks a prescribed list of points (for indicator tests)."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        self.map_id = "scripted"

    def __call__(self, x):
        d = torus.distance(self.points, x)
        i = int(np.argmin(d))
        return self.points[min(i + 1, len(self.points) - 1)]

    def inverse(self, x):
        d = torus.distance(self.points, x)
        i = int(np.argmin(d))
        return self.points[max(i - 1, 0)]


def _scripted_pattern(pattern, center, radius):
    """Pairwise-distinct points whose outside-ball indicator follows the
    given 0/1 pattern (the scripted map walks them by nearest lookup)."""
    inside = torus.wrap(center + np.array([radius / 4, 0, 0, 0]))
    outside = torus.wrap(center + np.array([3 * radius, 0, 0, 0]))
    pts = [(inside if b == 0 else outside) + np.array([0, k * 1e-6, 0, 0])
           for k, b in enumerate(pattern)]
    return torus.wrap(np.array(pts))


# ---------------------------------------------------------------------------
# indicator sums
# ---------------------------------------------------------------------------

def test_chi_sum_fixed_center(g, icfg, params):
    assert dec.chi_sum(g, icfg, params.q, 10, which="q") == 0


def test_chi_sum_orbit_never_entering(g, icfg, rng):
    # generic orbits of modest length stay outside both indicator balls
    for _ in range(5):
        x = rng.random(4)
        n = 12
        orb = torus.orbit(g, x, n)
        outside_q = np.all(torus.distance(orb, icfg.q) >= icfg.radius)
        outside_qp = np.all(torus.distance(orb, icfg.qprime) >= icfg.radius)
        if outside_q:
            assert dec.chi_sum(g, icfg, x, n, which="q") == n
        if outside_qp:
            assert dec.chi_sum(g, icfg, x, n, which="qprime") == n


def test_chi_sum_synthetic_recount(icfg):
    pattern = [0, 1, 1, 0, 1, 1, 1, 0, 1, 1]
    pts = _scripted_pattern(pattern, icfg.q, icfg.radius)
    m = ScriptedPath(pts)
    assert dec.chi_sum(m, icfg, pts[0], 10, which="q") == sum(pattern)


def test_chi_sum_backward_direction(icfg):
    pattern = [0, 1, 1, 1]
    pts = _scripted_pattern(pattern, icfg.q, icfg.radius)
    m = ScriptedPath(pts)
    # backward from the last point replays the pattern reversed
    assert dec.chi_sum(m, icfg, pts[-1], 4, which="q",
                       direction="backward") == sum(pattern)


# ---------------------------------------------------------------------------
# the three-way split
# ---------------------------------------------------------------------------

def test_decompose_all_outside_is_good(g, icfg, rng):
    for _ in range(10):
        x = rng.random(4)
        n = 10
        orb = torus.orbit(g, x, n)
        if np.all(torus.distance(orb, icfg.q) >= icfg.radius) and \
           np.all(torus.distance(orb, icfg.qprime) >= icfg.radius):
            t = dec.decompose(g, icfg, x, n)
            assert (t.p, t.g, t.s) == (0, n, 0)
            assert dec.is_good(g, icfg, x, n)


def test_decompose_fixed_center_all_prefix(g, icfg, params):
    n = 14
    t = dec.decompose(g, icfg, params.q, n)
    assert (t.p, t.g, t.s) == (n, 0, n - n)
    assert not dec.is_good(g, icfg, params.q, n)


def test_decompose_spec_pattern():
    # chi-pattern 0,0,1,1,1,1,1,1,1,1 with threshold 0.4 and a far second
    # center: largest prefix with average < r is i = 3, suffix empty
    center = np.array([0.1, 0.1, 0.1, 0.1])
    cfg = dec.IndicatorConfig(q=center, qprime=np.array([0.6, 0.6, 0.6, 0.6]),
                              radius=0.05, r=0.4)
    pts = _scripted_pattern([0, 0, 1, 1, 1, 1, 1, 1, 1, 1], center, cfg.radius)
    m = ScriptedPath(pts)
    t = dec.decompose(m, cfg, pts[0], 10)
    assert (t.p, t.g, t.s) == (3, 7, 0)


def test_decompose_overlap_convention():
    # prefix-bad and suffix-bad everywhere: the middle collapses to zero and
    # the suffix is truncated to n - p
    center = np.array([0.1, 0.1, 0.1, 0.1])
    center2 = np.array([0.6, 0.6, 0.6, 0.6])
    cfg = dec.IndicatorConfig(q=center, qprime=center2, radius=0.05, r=0.5)
    inside1 = torus.wrap(center + np.array([0.01, 0, 0, 0]))
    inside2 = torus.wrap(center2 + np.array([0.01, 0, 0, 0]))
    pts = np.array([inside1 + k * 1e-7 for k in range(5)]
                   + [inside2 + k * 1e-7 for k in range(5)])
    m = ScriptedPath(pts)
    t = dec.decompose(m, cfg, pts[0], 10)
    assert t.g == 0
    assert t.p + t.s == 10


def _brute_force_decompose(map_, cfg, x, n):
    orb = torus.orbit(map_, x, n)
    chi = (torus.distance(orb, cfg.q) >= cfg.radius).astype(int)
    chi_p = (torus.distance(orb, cfg.qprime) >= cfg.radius).astype(int)
    p = 0
    for i in range(1, n + 1):
        if chi[:i].sum() < cfg.r * i:
            p = i
    s = 0
    for k in range(1, n + 1):
        if chi_p[n - k:].sum() < cfg.r * k:
            s = k
    if p + s >= n:
        return p, 0, n - p
    return p, n - p - s, s


def test_decompose_matches_bruteforce(g, icfg, rng):
    mismatches = 0
    for _ in range(300):
        x = rng.random(4)
        n = int(rng.integers(1, 50))
        t = dec.decompose(g, icfg, x, n)
        assert t.p + t.g + t.s == n
        if (t.p, t.g, t.s) != _brute_force_decompose(g, icfg, x, n):
            mismatches += 1
    assert mismatches == 0


def test_decompose_batch_matches_single(g, icfg, rng):
    # short segments: batched and single orbit arithmetic agree bit for bit
    for n in (1, 4, 9, 12):
        xs = rng.random((80, 4))
        batch = dec.decompose_batch(g, icfg, xs, n)
        for x, row in zip(xs, batch):
            t = dec.decompose(g, icfg, x, n)
            assert (t.p, t.g, t.s) == tuple(row)


def test_decompose_middle_is_good(g, icfg, rng):
    # the re-verification property: the middle piece always satisfies the
    # goodness predicates
    checked = 0
    for _ in range(200):
        x = rng.random(4)
        n = int(rng.integers(2, 40))
        t = dec.decompose(g, icfg, x, n)
        if t.g > 0:
            mid = torus.orbit(g, x, t.p + 1)[-1]
            assert dec.is_good(g, icfg, mid, t.g)
            checked += 1
    assert checked > 100


def test_is_good_hereditary(g, icfg, rng):
    # a good segment decomposes trivially: p = s = 0
    found = 0
    while found < 20:
        x = np.random.default_rng(found).random(4)
        n = 15
        if dec.is_good(g, icfg, x, n):
            t = dec.decompose(g, icfg, x, n)
            assert (t.p, t.g, t.s) == (0, n, 0)
            found += 1


def test_is_good_vacuous_at_zero(g, icfg, rng):
    assert dec.is_good(g, icfg, rng.random(4), 0)


# ---------------------------------------------------------------------------
# derivative bounds along good segments
# ---------------------------------------------------------------------------

def test_good_bounds_linear(A, icfg, rates, field):
    # for the linear model every segment is good and the restricted cocycle
    # norms are exact eigenvalue powers, below theta_r^i when theta_r >= l2
    rng = np.random.default_rng(2)
    x = rng.random(4)
    ok, worst = dec.good_derivative_bounds(A.map, field, icfg, x, 10, M=0,
                                           rates=rates, r=0.1)
    assert ok and worst <= 1.0


def test_good_bounds_fixture_segment(g, icfg, rates, field, rng):
    for _ in range(5):
        x = rng.random(4)
        n = 12
        if dec.is_good(g, icfg, x, n):
            ok, worst = dec.good_derivative_bounds(g, field, icfg, x, n, M=0,
                                                   rates=rates, r=0.1)
            assert ok and worst <= 1.0


def test_good_bounds_reject_prefix_segment(g, icfg, params, rates, field):
    with pytest.raises(NotGood):
        dec.good_derivative_bounds(g, field, icfg, params.q, 12, M=0,
                                   rates=rates, r=0.1)


# ---------------------------------------------------------------------------
# leaf intersections
# ---------------------------------------------------------------------------

def test_leaf_intersection_affine_exact(A, rng):
    # transverse affine planes: closed-form linear-solve oracle
    x = rng.random(4)
    y = torus.wrap(x + 0.005 * rng.normal(size=4))
    l1 = dec.LeafModel(base=x, plane=A.Fu, scale=0.1)
    l2 = dec.LeafModel(base=y, plane=A.Fs, scale=0.1)
    z, d1, d2 = dec.leaf_intersection(l1, l2)
    # z on both affine leaves
    assert dec.leaf_distance_first_order(l1, z) < 1e-12
    assert dec.leaf_distance_first_order(l2, z) < 1e-12
    # distance bound with kappa_bar and beta=0 cones
    kb = A.kappa_bar
    dxy = float(torus.distance(x, y))
    assert max(d1, d2) <= kb * dxy * 1.0001


def test_leaf_intersection_same_point(A, rng):
    x = rng.random(4)
    l1 = dec.LeafModel(base=x, plane=A.Fu, scale=0.1)
    l2 = dec.LeafModel(base=x, plane=A.Fs, scale=0.1)
    z, d1, d2 = dec.leaf_intersection(l1, l2)
    assert torus.distance(z, x) < 1e-12 and d1 < 1e-12 and d2 < 1e-12


def test_leaf_intersection_bound_with_cones(A, g, field, params, rng):
    # fixture leaves at small distance: the intersection distances obey the
    # product-structure constant with the configured cone width
    beta = params.beta
    kb = A.kappa_bar
    for _ in range(5):
        x = rng.random(4)
        y = torus.wrap(x + 0.01 * rng.normal(size=4) / np.sqrt(4))
        P1 = Plane2(field.query_refined(g, x[None], "cu")[0])
        P2 = Plane2(field.query_refined(g, y[None], "cs")[0])
        z, d1, d2 = dec.leaf_intersection(
            dec.LeafModel(x, P1, 0.1), dec.LeafModel(y, P2, 0.1))
        bound = (1 + beta) / (1 - beta) * kb * float(torus.distance(x, y))
        assert max(d1, d2) <= bound


def test_leaf_metric_comparison(A, params, rng):
    # chord versus in-leaf distance on beta-tilted graphs
    beta = params.beta
    for _ in range(20):
        t = rng.uniform(0, beta)
        u = A.Fu.frame[:, 0]
        w = A.Fs.frame[:, 0]
        step = 0.01
        a = rng.random(4)
        b = torus.wrap(a + step * (u + t * w))
        d = float(torus.distance(a, b))
        d_leaf = step * np.sqrt(1 + t * t)   # graph arc of constant slope
        assert d <= d_leaf + 1e-12
        assert d_leaf <= (1 + beta) ** 2 * d + 1e-12


# ---------------------------------------------------------------------------
# uniform mixing time and the gluing construction
# ---------------------------------------------------------------------------

def test_tau0_fixture_value(g, A, params):
    assert dec.tau0(g, A, params.rho_prime) == 10


def test_tau0_growth_estimate_consistent(A, g, params):
    alpha = params.rho_prime / (2 * A.kappa_bar)
    R = dec.density_radius(A, alpha)
    est = dec.tau0_growth_estimate(A, params.rho_prime, R)
    got = dec.tau0(g, A, params.rho_prime)
    assert abs(est - got) <= 3


def test_tau0_large_leaves_immediate(A, g):
    # when the local leaves already reach across the torus the mixing time
    # collapses
    assert dec.tau0(g, A, rho_prime=0.5) <= 2


def test_tau0_cap_exceeded(A, g):
    with pytest.raises(NotFound):
        dec.tau0(g, A, rho_prime=1e-9, cap=3)


def test_min_segment_length(rates):
    N = dec.min_segment_length(0, rates, 0.1, tau=10)
    theta = rates.theta_at(0.1)
    assert theta ** N * rates.lam ** 10 < 0.5
    assert theta ** (N - 1) * rates.lam ** 10 >= 0.5


def test_witness_single_segment(g, A, rates, params, rng):
    x = rng.random(4)
    w = dec.construct_shadowing_orbit(g, A, [(x, 16)], M=0, rates=rates,
                                      r=0.1, rho_prime=params.rho_prime,
                                      tau=10)
    assert torus.distance(w.point, x) < 1e-12
    assert w.block_defects[0] < 1e-12


def test_witness_rejects_short_segments(g, A, rates, params, rng):
    with pytest.raises(PreconditionTooShort):
        dec.construct_shadowing_orbit(g, A, [(rng.random(4), 3)] * 2, M=0,
                                      rates=rates, r=0.1,
                                      rho_prime=params.rho_prime, tau=10)


def test_witness_two_copies_same_segment(g, A, icfg, rates, params, rng):
    n = dec.min_segment_length(0, rates, 0.1, tau=10) + 1
    x = None
    while x is None:
        c = rng.random(4)
        if dec.is_good(g, icfg, c, n):
            x = c
    w = dec.construct_shadowing_orbit(g, A, [(x, n), (x, n)], M=0,
                                      rates=rates, r=0.1,
                                      rho_prime=params.rho_prime, tau=10)
    assert w.ok
    assert all(d < 3 * params.rho_prime for d in w.block_defects)
