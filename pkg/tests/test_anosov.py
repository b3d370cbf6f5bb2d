import time

import numpy as np
import pytest

from datherm import anosov, torus
from datherm.errors import JumpTooLarge, NotFound
from datherm.planes import kappa_bar
from datherm.torus import Grid

# regression fixture: first certified polynomial at search bound 12 and the
# conditioning-optimized integer representative of its similarity class
PINNED_POLY = (-9, 21, -9)
PINNED_ENTRIES = np.array([
    [2, 1, -1, 0],
    [1, 2, 0, 2],
    [-1, 0, 1, 1],
    [0, 2, 1, 4],
])
PINNED_EIGS = np.array([0.18402624, 0.32737620, 3.05458981, 5.43400775])


def test_find_matrix_pinned_regression(A):
    assert A.poly == PINNED_POLY
    assert np.array_equal(A.entries, PINNED_ENTRIES)
    assert np.allclose(A.eigenvalues, PINNED_EIGS, atol=1e-7)


def test_spectrum_chain_certified(A):
    br = A.brackets
    assert np.all(br[:, 1] - br[:, 0] < 1e-9)
    assert br[0, 0] > 0
    assert br[0, 1] < br[1, 0]
    assert br[1, 1] < 1 / 3
    assert br[2, 0] > 3
    assert br[2, 1] < br[3, 0]


def test_determinant_one(A):
    assert round(np.linalg.det(A.entries.astype(float))) == 1
    assert abs(np.prod(A.eigenvalues) - 1.0) < 1e-10


def test_identity_and_nonsplit_polys_rejected():
    # identity-like spectrum: all roots 1 -> rejected
    assert anosov.verify_spectrum(-4, 6, -4) is None
    # real but not split around (1/3, 3)
    assert anosov.verify_spectrum(0, 0, 0) is None


def test_search_bound_too_small():
    with pytest.raises(NotFound):
        anosov.find_matrix(3)


def test_eigenvector_residuals(A):
    M = A.entries.astype(float)
    for lam, v in zip(A.eigenvalues, A.eigenvectors.T):
        assert np.linalg.norm(M @ v - lam * v) < 1e-10


def test_lattice_preserved(A):
    grid = Grid(16)
    pts = grid.sample(np.random.default_rng(0), 500)
    img = A.map(pts)
    snapped = np.round(img * 16) / 16
    assert np.max(torus.distance(img, snapped)) < 1e-12


def test_fixed_points(A):
    fps = A.fixed_points()
    assert len(fps) == 5
    assert np.max(torus.distance(A.map(fps), fps)) < 1e-12
    assert np.allclose(fps[0], 0.0)


def test_kappa_bar_of_pinned_fixture(A):
    # the conditioned representative is symmetric: eigenplanes orthogonal
    assert A.kappa_bar == pytest.approx(1.0, abs=1e-9)
    # derived oracle: smallest principal angle via singular values
    s = np.linalg.svd(A.Fs.frame.T @ A.Fu.frame, compute_uv=False)
    assert kappa_bar(A.Fs, A.Fu) == pytest.approx(
        1.0 / np.sqrt(1 - min(s[0], 1.0) ** 2) if s[0] < 1 else np.inf, rel=1e-6)


def test_shadow_true_orbit_is_fixed(A, rng):
    x = rng.random(4)
    p = torus.orbit(A.map, x, 21)
    y = anosov.shadow(A, p, center=0)
    assert torus.distance(y, x) < 1e-10


def test_shadow_constant_pseudo_orbit_at_fixed_point(A):
    q = A.fixed_points()[1]
    p = np.tile(q, (15, 1))
    y = anosov.shadow(A, p, center=7)
    assert torus.distance(y, q) < 1e-12


def test_shadow_jump_check(A, rng):
    p = rng.random((10, 4))  # jumps of order the diameter
    with pytest.raises(JumpTooLarge):
        anosov.shadow(A, p, max_jump=1e-3)


def test_shadow_of_deformed_orbit(A, g, eta):
    # orbit of the deformed map is a pseudo-orbit for the linear model;
    # the shadow must track it within eta, verified by direct defect
    # evaluation around the center
    x = np.array([0.12, 0.34, 0.56, 0.78])
    w = 12
    pts = [x]
    fwd = x
    bwd = x
    for _ in range(w):
        fwd = g(fwd)
        pts.append(fwd)
    back = []
    for _ in range(w):
        bwd = g.inverse(bwd)
        back.append(bwd)
    p = np.array(back[::-1] + pts)
    y = anosov.shadow(A, p, center=w)
    # defect over a window near the center (float orbits of y lose accuracy
    # at rate l4 per step, so check a modest two-sided window)
    fy, gy = y, p[w]
    worst = torus.distance(y, p[w])
    for k in range(1, 6):
        fy = A.map(fy)
        worst = max(worst, torus.distance(fy, p[w + k]))
    assert worst < eta


def test_semiconjugacy_identity_for_linear(A, rng):
    pi = anosov.semiconjugacy(A, A.map, rng.random(4), window=16)
    # careful: pi of the linear map itself is the identity
    x = rng.random(4)
    assert torus.distance(anosov.semiconjugacy(A, A.map, x, window=16), x) < 1e-10


def test_semiconjugacy_fixes_unperturbed_fixed_point(A, g):
    q3 = A.fixed_points()[2]  # not used by the deformation
    assert torus.distance(g(q3), q3) < 1e-12
    pi = anosov.semiconjugacy(A, g, q3, window=16)
    assert torus.distance(pi, q3) < 1e-10


def test_semiconjugacy_equivariance(A, g, rng):
    # d(pi(g x), f_A(pi x)) small over >= 100 random points
    xs = rng.random((100, 4))
    worst = 0.0
    for x in xs:
        px = anosov.semiconjugacy(A, g, x, window=20)
        pgx = anosov.semiconjugacy(A, g, g(x), window=20)
        worst = max(worst, float(torus.distance(pgx, A.map(px))))
    assert worst < 1e-6


def test_gibbs_L_single_step_large_scale(A):
    # at a scale beyond the diameter any two points collide: one orbit
    # survives and L >= e^{-h}
    L = anosov.gibbs_L(A, eta=1.5, n_max=1, grid=Grid(6))
    assert L == pytest.approx(np.exp(-A.h_top), rel=1e-9)


def test_gibbs_L_nondecreasing_in_nmax(A):
    grid = Grid(10)
    vals = [anosov.gibbs_L(A, 0.2, n, grid) for n in (1, 2, 3)]
    assert vals[0] <= vals[1] <= vals[2] + 1e-12


def test_gibbs_L_fixture_value(A):
    # frozen regression value for the standard small-grid configuration
    L = anosov.gibbs_L(A, A.default_eta(), 3, Grid(8))
    assert L > 1.0
    assert L == pytest.approx(246.76683749364577, rel=1e-9)


def test_shadowing_constant_formula(A):
    l2, l3 = A.eigenvalues[1], A.eigenvalues[2]
    expect = A.kappa_bar * max(1 / (1 - l2), 1 / (1 - 1 / l3))
    assert A.shadowing_constant() == pytest.approx(expect, rel=1e-12)


def test_json_roundtrip(A, tmp_path):
    path = tmp_path / "fixture.json"
    A.save(path)
    B = anosov.AnosovMatrix.load(path)
    assert np.array_equal(B.entries, A.entries)
    assert np.allclose(B.eigenvalues, A.eigenvalues)
    assert B.poly == A.poly


def test_search_runtime(A):
    t0 = time.time()
    anosov.find_matrix(12)
    assert time.time() - t0 < 60
