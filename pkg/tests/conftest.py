import numpy as np
import pytest

from datherm import anosov, bvmap, grassmann, torus
from datherm.torus import Grid


@pytest.fixture(scope="session")
def A():
    return anosov.find_matrix(12)


@pytest.fixture(scope="session")
def eta(A):
    return A.default_eta()


@pytest.fixture(scope="session")
def params(A):
    return bvmap.BVParams.default_for(A)


@pytest.fixture(scope="session")
def g(A, params, eta):
    return bvmap.construct_bv(A, params, eta)


@pytest.fixture(scope="session")
def clusters(g, params):
    rng = np.random.default_rng(0)
    return np.concatenate([
        g.support_samples(per_lobe=300, rng=rng),
        torus.ball_cluster(params.q, params.rho, 3),
        torus.ball_cluster(params.qprime, params.rho, 3),
    ])


@pytest.fixture(scope="session")
def field(g, clusters):
    return grassmann.build_splitting(g, Grid(6), extra_points=clusters, tol=1e-11)


@pytest.fixture(scope="session")
def rates(g, field):
    return bvmap.estimate_rates(g, field, r_values=[0.1, 0.2])


@pytest.fixture(scope="session")
def shadowing_data(A):
    L = anosov.gibbs_L(A, A.default_eta(), 4, Grid(12))
    return anosov.ShadowingData(C=A.shadowing_constant(), eta=A.default_eta(),
                                L=L, h=A.h_top)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
