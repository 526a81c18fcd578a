import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles as O
from emtdamp.gaussian import GaussianMsg
from emtdamp.prior import BGGroups, bg_marginal, bias_posterior, group_posterior, pasp_update, spmp_extrinsic


def random_group(rng, M):
    rho = rng.uniform(0.02, 0.98)
    mu = rng.normal(0, 1, M)
    var = rng.uniform(0.1, 3, M)
    q = rng.normal(0, 2, M)
    vq = rng.uniform(0.05, 5, M)
    return rho, mu, var, q, vq


def as_groups(rho, mu, var):
    return BGGroups(np.array([rho]), mu[:, None], var[:, None])


def test_posterior_and_extrinsic_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        M = int(rng.integers(1, 5))
        rho, mu, var, q, vq = random_group(rng, M)
        g = as_groups(rho, mu, var)
        msg = GaussianMsg(q[:, None], vq[:, None])
        post = group_posterior(g, msg)
        assert post.groups.rho[0] == pytest.approx(O.bg_enumeration(rho, mu, var, q, vq), rel=1e-10)
        ext = spmp_extrinsic(g, msg)
        for m in range(M):
            assert ext.rho[m, 0] == pytest.approx(O.bg_enumeration(rho, mu, var, q, vq, exclude=m), rel=1e-10)


def test_slab_posterior_matches_quadrature():
    g = as_groups(0.3, np.array([0.5]), np.array([2.0]))
    post = group_posterior(g, GaussianMsg(np.array([[-1.0]]), np.array([[0.7]])))
    m, v = O.slab_posterior_quad(0.5, 2.0, -1.0, 0.7)
    assert post.groups.mu[0, 0] == pytest.approx(m, rel=1e-10)
    assert post.groups.var[0, 0] == pytest.approx(v, rel=1e-10)


def test_flat_messages_leave_prior_unchanged():
    g = BGGroups(np.array([0.3, 0.7]), np.ones((3, 2)), np.full((3, 2), 0.5))
    flat = GaussianMsg(np.zeros((3, 2)), np.full((3, 2), np.inf))
    post = group_posterior(g, flat)
    assert np.allclose(post.groups.rho, g.rho, rtol=1e-14, atol=0)
    assert np.array_equal(post.groups.mu, g.mu) and np.array_equal(post.groups.var, g.var)
    ext = spmp_extrinsic(g, flat)
    assert np.allclose(ext.rho, g.rho[None, :])


def test_hard_activity_is_absorbing():
    g = BGGroups(np.array([0.0, 1.0]), np.zeros((2, 2)), np.ones((2, 2)))
    msg = GaussianMsg(np.array([[50.0, 0.0], [50.0, 0.0]]), np.full((2, 2), 1e-3))
    post = group_posterior(g, msg)
    assert post.groups.rho.tolist() == [0.0, 1.0]
    assert np.array_equal(spmp_extrinsic(g, msg).rho, np.array([[0.0, 1.0], [0.0, 1.0]]))


def test_leave_one_out_consistency():
    # extrinsic for element m combined with m's own evidence equals the full posterior
    rng = np.random.default_rng(3)
    rho, mu, var, q, vq = random_group(rng, 4)
    g = as_groups(rho, mu, var)
    msg = GaussianMsg(q[:, None], vq[:, None])
    full = group_posterior(g, msg).groups.rho[0]
    ext = spmp_extrinsic(g, msg).rho[:, 0]
    for m in range(4):
        sub = as_groups(ext[m], mu[m : m + 1], var[m : m + 1])
        one = group_posterior(sub, GaussianMsg(q[m : m + 1, None], vq[m : m + 1, None])).groups.rho[0]
        assert one == pytest.approx(full, rel=1e-12)


@given(
    st.floats(1e-6, 1 - 1e-6),
    hnp.arrays(float, 4, elements=st.floats(-1e3, 1e3)),
    hnp.arrays(float, 4, elements=st.floats(1e-8, 1e4)),
    hnp.arrays(float, 4, elements=st.floats(1e-8, 1e4)),
)
def test_adversarial_inputs_stay_valid(rho, q, vq, var):
    g = as_groups(rho, np.zeros(4), var)
    msg = GaussianMsg(q[:, None], vq[:, None])
    post = group_posterior(g, msg)
    ext = spmp_extrinsic(g, msg)
    assert np.all(np.isfinite(post.groups.mu)) and np.all(post.groups.var > 0)
    assert 0.0 <= post.groups.rho[0] <= 1.0
    assert np.all((ext.rho >= 0) & (ext.rho <= 1))
    m, v = bg_marginal(ext.rho, ext.mu, ext.var, msg.mean, msg.var)
    assert np.all(np.isfinite(m)) and np.all(v >= 0)


def test_bias_posterior_is_length_one():
    g = BGGroups(np.array([1.0, 0.5]), np.zeros((1, 2)), np.ones((1, 2)))
    post = bias_posterior(g, GaussianMsg(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]])))
    assert post.groups.mu[0].tolist() == [0.5, 0.5]
    assert post.groups.rho[0] == 1.0
    with pytest.raises(ValueError):
        bias_posterior(BGGroups(np.ones(1), np.zeros((2, 1)), np.ones((2, 1))), GaussianMsg(np.zeros((2, 1)), np.ones((2, 1))))


def test_pasp():
    g = BGGroups(np.array([0.4]), np.ones((2, 1)), np.ones((2, 1)))
    h = pasp_update(g)
    assert h is not g and np.array_equal(h.mu, g.mu)
    assert len(pasp_update([g, g])) == 2
    with pytest.raises(ValueError):
        pasp_update(g, lam=0.5)


def test_bg_marginal_matches_mixture_moments():
    rho, mu, var, q, vq = 0.35, 0.4, 1.5, -0.8, 0.6
    pi = O.bg_enumeration(rho, np.array([mu]), np.array([var]), np.array([q]), np.array([vq]))
    ms, vs = O.slab_posterior_quad(mu, var, q, vq)
    m, v = bg_marginal(np.array(rho), np.array(mu), np.array(var), np.array(q), np.array(vq))
    assert float(m) == pytest.approx(pi * ms, rel=1e-10)
    assert float(v) == pytest.approx(pi * (vs + ms**2) - (pi * ms) ** 2, rel=1e-10)
