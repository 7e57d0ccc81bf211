import numpy as np
import pytest

from floodlag import kernels
from floodlag.kernels import available_backends, cond_poisson_derivs
from floodlag.synth import simulate_panel


def _brute_loglik(panel, beta):
    """Conditional log-likelihood written out stratum by stratum."""
    eta = panel.X @ beta + panel.offset
    ll = 0.0
    for a, b in zip(panel.ptr[:-1], panel.ptr[1:]):
        e = eta[a:b]
        logp = e - np.log(np.sum(np.exp(e - e.max()))) - e.max()
        ll += float(panel.y[a:b] @ logp)
    return ll


@pytest.fixture
def panel():
    p, _ = simulate_panel(12, [0.1, 0.0, -0.1, 0.05, 0.0], seed=5)
    return p


def test_loglik_matches_brute_force(panel, backend):
    beta = np.linspace(-0.2, 0.2, panel.X.shape[1])
    ll, *_ = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta, backend)
    assert ll == pytest.approx(_brute_loglik(panel, beta), rel=1e-12)


def test_score_and_information_by_finite_differences(panel, backend):
    rng = np.random.default_rng(1)
    beta = rng.normal(0, 0.1, panel.X.shape[1])
    _, score, info, fitted = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta, backend)
    h = 1e-5
    p = len(beta)
    num_score = np.zeros(p)
    num_hess = np.zeros((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = h
        up = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta + e, backend)
        dn = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta - e, backend)
        num_score[j] = (up[0] - dn[0]) / (2 * h)
        num_hess[:, j] = (up[1] - dn[1]) / (2 * h)
    np.testing.assert_allclose(score, num_score, atol=1e-5)
    np.testing.assert_allclose(info, -num_hess, atol=1e-5)
    np.testing.assert_allclose(info, info.T)
    # fitted values reproduce stratum totals
    tot = np.add.reduceat(panel.y, panel.ptr[:-1])
    np.testing.assert_allclose(np.add.reduceat(fitted, panel.ptr[:-1]), tot)


def test_backends_agree(panel):
    if len(available_backends()) < 2:
        pytest.skip("compiled backend not built")
    beta = np.full(panel.X.shape[1], 0.03)
    a = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta, "python")
    b = cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, beta, "cython")
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels._select("fortran")


def test_backend_flag():
    assert kernels.BACKEND in ("python", "cython")
    assert "python" in available_backends()
