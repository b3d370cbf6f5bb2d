import math

import numpy as np
import pytest

from datherm import bvmap, torus
from datherm.bvmap import BVParams, RateReport, c0_distance, cone_check, construct_bv
from datherm.errors import GridTooCoarse, InvalidParams


def test_params_scale_chain_validation(A, eta):
    p = BVParams.default_for(A, rho=0.01)  # 63*kappa*5*rho >> 6*eta
    with pytest.raises(InvalidParams, match="scale chain"):
        p.validate(A, eta)


def test_params_beta_validation(A, eta):
    p = BVParams.default_for(A)
    bad = BVParams(rho=p.rho, pitchfork_amplitude=p.pitchfork_amplitude,
                   rotation_angle=p.rotation_angle, beta=0.4, q=p.q,
                   qprime=p.qprime)
    with pytest.raises(InvalidParams, match="beta"):
        bad.validate(A, eta)


def test_zero_deformation_is_linear(A, eta, rng):
    p0 = BVParams.default_for(A)
    p = BVParams(rho=p0.rho, pitchfork_amplitude=0.0, rotation_angle=0.0,
                 beta=p0.beta, q=p0.q, qprime=p0.qprime)
    g0 = construct_bv(A, p, eta)
    pts = np.concatenate([rng.random((500, 4)),
                          torus.ball_cluster(p.q, p.rho, 3)])
    assert np.array_equal(g0(pts), A.map(pts))


def test_support_condition_exact(A, g, params, rng):
    # outside both deformation balls the map equals the linear model
    # bit-for-bit
    pts = rng.random((10_000, 4))
    keep = (torus.distance(pts, params.q) >= params.rho) & \
           (torus.distance(pts, params.qprime) >= params.rho)
    pts = pts[keep]
    assert np.array_equal(g(pts), A.map(pts))
    assert np.array_equal(g.jacobian(pts[:100]), A.map.jacobian(pts[:100]))


def test_jacobian_matches_finite_differences_random(g, rng):
    # random points, fixed step: almost all lie outside the supports where
    # the derivative is the constant integer matrix
    pts = rng.random((100, 4))
    step = 1e-6
    worst = 0.0
    for x in pts:
        J = g.jacobian(x)
        Jfd = np.zeros((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = step
            Jfd[:, k] = torus.frac_delta(g(torus.wrap(x + e)),
                                         g(torus.wrap(x - e))) / (2 * step)
        worst = max(worst, np.max(np.abs(J - Jfd)) / np.max(np.abs(J)))
    assert worst < 1e-5


def test_jacobian_matches_finite_differences_in_support(g, rng):
    # inside the deformation the field varies on the gauge scales, so the
    # step must sit far below them
    pts = g.support_samples(per_lobe=25, rng=rng)
    step = 2e-11
    worst = 0.0
    for x in pts:
        J = g.jacobian(x)
        Jfd = np.zeros((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = step
            Jfd[:, k] = torus.frac_delta(g(torus.wrap(x + e)),
                                         g(torus.wrap(x - e))) / (2 * step)
        worst = max(worst, np.max(np.abs(J - Jfd)) / np.max(np.abs(J)))
    assert worst < 1e-4


def test_pitchfork_eigenvalue_crosses_one(A, eta):
    l2 = A.eigenvalues[1]
    base = BVParams.default_for(A)

    def center_multiplier(amp):
        p = BVParams(rho=base.rho, pitchfork_amplitude=amp, rotation_angle=0.0,
                     beta=base.beta, q=base.q, qprime=base.qprime)
        gg = construct_bv(A, p, eta)
        eigs = np.sort(np.abs(np.linalg.eigvals(gg.jacobian(p.q))))
        return eigs[1]

    small = center_multiplier(0.5)       # l2 * 1.5 < 1
    assert small == pytest.approx(l2 * 1.5, rel=1e-9)
    assert small < 1.0
    big = center_multiplier(1 / l2 - 1 + 0.2)
    assert big > 1.0


def test_pitchfork_points_are_fixed(g, params):
    q1, q2 = g.pitchfork_points()
    assert torus.distance(g(q1), q1) < 1e-12
    assert torus.distance(g(q2), q2) < 1e-12
    assert torus.distance(q1, params.q) > 0
    # both sit on the second eigendirection axis through q
    off = torus.frac_delta(q2, params.q)
    e2 = g.V[:, 1]
    assert np.linalg.norm(off - (off @ e2) * e2) < 1e-12


def test_rotation_changes_contracting_block(A, params, eta):
    p_no = BVParams(rho=params.rho,
                    pitchfork_amplitude=params.pitchfork_amplitude,
                    rotation_angle=0.0, beta=params.beta, q=params.q,
                    qprime=params.qprime)
    g_no = construct_bv(A, p_no, eta)
    g_rot = construct_bv(A, params, eta)
    q2 = g_rot.pitchfork_points()[1]
    J_no = g_no.jacobian(q2)
    J_rot = g_rot.jacobian(q2)
    # the rotation acts inside the contracting plane: restricted blocks differ
    Fs = A.Fs.frame
    B_no = Fs.T @ J_no @ Fs
    B_rot = Fs.T @ J_rot @ Fs
    asym = 0.5 * (B_rot - B_rot.T) - 0.5 * (B_no - B_no.T)
    assert np.linalg.norm(asym) > 0.3 * math.sin(params.rotation_angle) * \
        np.abs(np.diag(B_no)).min()


def test_inverse_roundtrip(g, rng):
    pts = np.concatenate([rng.random((200, 4)),
                          g.support_samples(per_lobe=100, rng=rng)])
    assert np.max(torus.distance(g.inverse(g(pts)), pts)) < 1e-12
    assert np.max(torus.distance(g(g.inverse(pts)), pts)) < 1e-12


def test_deformation_is_diffeomorphism(g):
    assert g.min_jacobian_det > 0.02


def test_overdriven_deformation_rejected(A, eta):
    base = BVParams.default_for(A)
    bad = BVParams(rho=base.rho, pitchfork_amplitude=8.0, rotation_angle=0.0,
                   beta=base.beta, q=base.q, qprime=base.qprime)
    with pytest.raises(InvalidParams, match="near-singular|no bifurcated"):
        construct_bv(A, bad, eta)


def test_mp_backend_matches_numpy(g, rng):
    import mpmath as mp
    pts = g.support_samples(per_lobe=20, rng=rng)
    with mp.workdps(40):
        for x in pts[:30]:
            ours = g(x)
            theirs = np.array([float(v) for v in g.mp_apply(
                [mp.mpf(float(c)) for c in x])])
            assert torus.distance(ours, theirs) < 1e-14


def test_rates_on_linear_map(A, eta, field):
    # zero deformation: rates reduce to the eigenvalues and gamma to 0
    p0 = BVParams.default_for(A)
    p = BVParams(rho=p0.rho, pitchfork_amplitude=0.0, rotation_angle=0.0,
                 beta=p0.beta, q=p0.q, qprime=p0.qprime)
    g0 = construct_bv(A, p, eta)
    from datherm import grassmann
    from datherm.torus import Grid
    clusters = np.concatenate([torus.ball_cluster(p.q, p.rho, 2),
                               torus.ball_cluster(p.qprime, p.rho, 2)])
    f0 = grassmann.build_splitting(g0, Grid(4), extra_points=clusters)
    rates = bvmap.estimate_rates(g0, f0, r_values=[0.1])
    l = A.eigenvalues
    assert rates.lambda_s == pytest.approx(l[1], abs=1e-9)
    assert rates.lambda_cs == pytest.approx(l[1], abs=1e-9)
    assert rates.lambda_u == pytest.approx(l[2], abs=1e-9)
    assert rates.lambda_cu == pytest.approx(l[2], abs=1e-9)
    assert rates.gamma == 0.0


def test_rates_fixture_inequalities(rates, params):
    assert rates.lambda_s < 1 < rates.lambda_cs
    assert rates.lambda_cu < 1 < rates.lambda_u
    assert rates.lam > 1
    assert 0 < rates.gamma < 0.5
    assert bvmap.check_rate_inequality(rates, params.beta)
    # theta_r < 1 for every requested r > gamma, and theta_cs/theta_cu sane
    for key, th in rates.theta_r.items():
        if float(key) > rates.gamma:
            assert th < 1
    assert rates.theta_cs == pytest.approx(0.8 + 0.2 * rates.lambda_s)
    assert rates.theta_cu == pytest.approx(0.8 + 0.2 / rates.lambda_u)


def test_gamma_closed_form():
    # independent high-precision evaluation of the crossing exponent
    got = RateReport.gamma_of(lambda_s=0.5, lambda_u=2.0,
                              lambda_cs=1.05, lambda_cu=1 / 1.05)
    import mpmath as mp
    with mp.workdps(50):
        expect = mp.log(mp.mpf("1.05")) / (mp.log(mp.mpf("1.05"))
                                           - mp.log(mp.mpf("0.5")))
        expect = max(expect, mp.log(1 / mp.mpf("1.05"))
                     / (mp.log(1 / mp.mpf("1.05")) - mp.log(2)))
    assert got == pytest.approx(float(expect), rel=1e-12)
    assert got == pytest.approx(0.0658, abs=5e-5)


def test_theta_r_closed_form():
    got = RateReport.theta_of(0.2, lambda_s=0.5, lambda_u=2.0,
                              lambda_cs=1.05, lambda_cu=1 / 1.05)
    assert got == pytest.approx(0.9052, abs=5e-5)


def test_theta_monotone_on_gamma_one(rates):
    grid = np.linspace(rates.gamma + 1e-3, 1.0, 40)
    vals = [rates.theta_at(r) for r in grid]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
    # boundary sanity: at r = gamma the binding side degenerates to 1 (the
    # other side can already be contracting, so the min may sit below 1)
    if rates.gamma > 0:
        g = rates.gamma
        f_cs = rates.lambda_cs ** (1 - g) * rates.lambda_s ** g
        f_cu = rates.lambda_cu ** -(1 - g) * rates.lambda_u ** -g
        assert max(f_cs, f_cu) == pytest.approx(1.0, abs=1e-9)


def test_rates_require_ball_resolution(g, A):
    from datherm import grassmann
    from datherm.torus import Grid
    coarse = grassmann.build_splitting(g, Grid(4))  # misses the tiny balls
    with pytest.raises(GridTooCoarse):
        bvmap.estimate_rates(g, coarse, r_values=[0.1])


def test_cone_check_linear(A, eta, rng):
    p0 = BVParams.default_for(A)
    p = BVParams(rho=p0.rho, pitchfork_amplitude=0.0, rotation_angle=0.0,
                 beta=0.25, q=p0.q, qprime=p0.qprime)
    g0 = construct_bv(A, p, eta)
    ok, margin, _ = cone_check(g0, 0.25, rng.random((40, 4)), n_dir=10)
    assert ok and margin > 0


def test_cone_check_fixture(g, params, rng):
    pts = np.concatenate([g.support_samples(per_lobe=60, rng=rng),
                          rng.random((30, 4))])
    ok, margin, _ = cone_check(g, params.beta, pts, n_dir=10)
    assert ok and margin > 0.05


def test_cone_check_reports_violation(g, rng):
    # a cone far narrower than the deformation tilts must fail, with witness
    pts = g.support_samples(per_lobe=60, rng=rng)
    ok, margin, witness = cone_check(g, 0.002, pts, n_dir=10)
    assert not ok and margin < 0 and witness is not None


def test_c0_distance_zero_for_same_map(A, rng):
    d, _ = c0_distance(A.map, A.map, rng.random((200, 4)))
    assert d == 0.0


def test_c0_distance_fixture_below_shadowing_threshold(A, g, eta, rng):
    pts = np.concatenate([g.support_samples(per_lobe=400, rng=rng),
                          rng.random((200, 4))])
    d, _ = c0_distance(g, A.map, pts)
    assert 0 < d < eta / A.shadowing_constant()
    # the maximum is attained inside the deformation balls
    far = rng.random((500, 4))
    keep = (torus.distance(far, g.params.q) >= g.params.rho) & \
           (torus.distance(far, g.params.qprime) >= g.params.rho)
    d_far, _ = c0_distance(g, A.map, far[keep])
    assert d_far == 0.0
