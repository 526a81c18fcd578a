import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emtdamp import em
from emtdamp.data import partition
from emtdamp.federated import (
    ClientSummary,
    FedConfig,
    aggregate_noise,
    aggregate_posteriors,
    client_local_train,
    run_federated,
)
from emtdamp.network import NetHyper, init_hyper
from emtdamp.prior import BGGroups


def gauss_net(mu_w, var_w, rho=1.0):
    return NetHyper(
        (1, 1), "regression", [BGGroups(np.array([rho]), np.array([[mu_w]]), np.array([[var_w]]))],
        [BGGroups(np.ones(1), np.zeros((1, 1)), np.ones((1, 1)))], 1.0,
    )


def summary(k, h, n=10, **kw):
    return ClientSummary(k, h, n, **({"sigma": 1.0} | kw))


def hyper_equal(a, b):
    return all(
        np.array_equal(g.rho, k.rho) and np.array_equal(g.mu, k.mu) and np.array_equal(g.var, k.var)
        for g, k in zip(a.weights + a.biases, b.weights + b.biases)
    ) and a.noise_var == b.noise_var


def test_wga_two_gaussians():
    out = aggregate_posteriors([summary(0, gauss_net(0.0, 1.0)), summary(1, gauss_net(2.0, 1.0))])
    assert out.weights[0].mu[0, 0] == pytest.approx(1.0) and out.weights[0].var[0, 0] == pytest.approx(1.0)


def test_wga_identity_and_idempotence():
    h = init_hyper((3, 4, 2), rho0=0.4, seed=2)
    assert hyper_equal(aggregate_posteriors([summary(5, h)]), h)
    twice = aggregate_posteriors([summary(0, h), summary(1, h.copy())])
    for g, k in zip(twice.weights + twice.biases, h.weights + h.biases):
        assert np.allclose(g.mu, k.mu, rtol=1e-14) and np.allclose(g.var, k.var, rtol=1e-14)
        assert np.allclose(g.rho, k.rho, rtol=1e-12)


def test_wga_activity_edge_cases():
    out = aggregate_posteriors([summary(0, gauss_net(0.0, 1.0, rho=0.0)), summary(1, gauss_net(0.0, 1.0, rho=0.9))])
    assert out.weights[0].rho[0] == 0.0
    out = aggregate_posteriors([summary(0, gauss_net(0.0, 1.0, rho=1.0)), summary(1, gauss_net(0.0, 1.0, rho=1.0))])
    assert out.weights[0].rho[0] == 1.0


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(1e-3, 10), st.integers(1, 500)), min_size=2, max_size=6))
def test_wga_hull_and_variance_bound(clients):
    ss = [summary(k, gauss_net(m, v), n) for k, (m, v, n) in enumerate(clients)]
    out = aggregate_posteriors(ss).weights[0]
    ms = [m for m, _, _ in clients]
    assert min(ms) - 1e-9 <= out.mu[0, 0] <= max(ms) + 1e-9
    assert out.var[0, 0] <= max(v for _, v, _ in clients) * (1 + 1e-12)


def test_aggregation_order_is_irrelevant():
    hs = [init_hyper((2, 3, 1), rho0=0.6, seed=s) for s in range(3)]
    a = aggregate_posteriors([summary(k, h, 10 + k) for k, h in enumerate(hs)])
    b = aggregate_posteriors([summary(k, h, 10 + k) for k, h in reversed(list(enumerate(hs)))])
    assert hyper_equal(a, b)


def test_noise_aggregation_identity_on_random_partitions():
    rng = np.random.default_rng(0)
    I = 97
    y, z, vz = rng.normal(size=(I, 2)), rng.normal(size=(I, 2)), rng.uniform(0, 1, (I, 2))
    xi, vxi = rng.normal(-2, 1, (I, 9)), rng.uniform(0, 1, (I, 9))
    central_r = em.NoiseStats("regression")
    central_r.add_regression(y, z, vz)
    central_c = em.NoiseStats("classification")
    central_c.add_classification(xi, vxi)
    for seed in range(5):
        shards = partition(I, n_parts=4, seed=seed)
        reg, cls = [], []
        for k, idx in enumerate(shards):
            s = em.NoiseStats("regression")
            s.add_regression(y[idx], z[idx], vz[idx])
            reg.append(summary(k, gauss_net(0, 1), len(idx), sigma=s.sigma))
            c = em.NoiseStats("classification")
            c.add_classification(xi[idx], vxi[idx])
            cls.append(ClientSummary(k, gauss_net(0, 1), len(idx), mu=c.mu, second=c.second))
        assert aggregate_noise(reg) == pytest.approx(central_r.sigma, rel=1e-12)
        mu, second = aggregate_noise(cls)
        assert mu == pytest.approx(central_c.mu, rel=1e-12) and second == pytest.approx(central_c.second, rel=1e-12)


def test_equal_sigma_gives_sigma():
    ss = [summary(k, gauss_net(0, 1), n, sigma=0.37) for k, n in enumerate([3, 50, 8])]
    assert aggregate_noise(ss) == pytest.approx(0.37, rel=1e-15)


def test_summary_roundtrip_and_payload_size():
    h = init_hyper((3, 5, 2), "classification", rho0=0.5, seed=1)
    rng = np.random.default_rng(1)
    s = ClientSummary(2, h, 17, mu=-1.25, second=3.5, log_evidence=rng.normal(size=h.n_weight_groups))
    back = ClientSummary.loads(s.dumps())
    assert hyper_equal(back.posterior, h) and back.mu == s.mu and np.array_equal(back.log_evidence, s.log_evidence)
    big = ClientSummary(2, h, 17_000_000, mu=-1.25, second=3.5, log_evidence=s.log_evidence)
    assert abs(len(big.dumps()) - len(s.dumps())) <= 6
    with pytest.raises(ValueError):
        ClientSummary(0, h, 0)


def toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = x @ np.array([[1.0], [-0.5], [0.25]]) + 0.1 * rng.normal(size=(n, 1))
    return x, y


def test_identical_clients_identical_summaries():
    x, y = toy()
    h = init_hyper((3, 4, 1), seed=0)
    a = client_local_train(0, x, y, h, 2, 10)
    b = client_local_train(1, x, y, h, 2, 10)
    assert hyper_equal(a.posterior, b.posterior) and a.sigma == b.sigma


def test_k1_matches_centralized():
    x, y = toy()
    h = init_hyper((3, 4, 1), seed=0)
    fed = run_federated(x, y, h, FedConfig(clients=1, rounds=3, inner=1, batch_size=10, seed=4))
    cen = em.run_em(x, y, h, em.TrainConfig(iterations=3, batch_size=10, seed=4))
    assert hyper_equal(fed.hyper, cen.hyper)


def test_zero_rounds_and_shard_validation():
    x, y = toy()
    h = init_hyper((3, 4, 1), seed=0)
    assert hyper_equal(run_federated(x, y, h, FedConfig(rounds=0)).hyper, h)
    bad = [np.arange(0, 20), np.arange(20, 40), np.array([], dtype=int)]
    with pytest.raises(ValueError, match="empty"):
        run_federated(x, y, h, FedConfig(clients=3, rounds=1, shards=bad))
    with pytest.raises(ValueError):
        run_federated(x, y, h, FedConfig(clients=2, rounds=1, shards=[np.arange(0, 20), np.arange(10, 40)]))
    with pytest.raises(ValueError):
        client_local_train(0, x[:0], y[:0], h, 1, 10)


def test_dropout_reweights_present_clients():
    x, y = toy()
    h = init_hyper((3, 4, 1), seed=0)
    shards = partition(len(x), n_parts=4, seed=0)
    res = run_federated(x, y, h, FedConfig(clients=4, rounds=2, inner=1, batch_size=10, dropout={1: [0, 2]}))
    assert [r["clients"] for r in res.history] == [2, 4]
    # the same round computed by hand over clients 1 and 3
    ss = [client_local_train(k, x[shards[k]], y[shards[k]], h, 1, 10) for k in (1, 3)]
    n = np.array([len(shards[1]), len(shards[3])], dtype=float)
    assert aggregate_noise(ss) == pytest.approx(float((n / n.sum()) @ [s.sigma for s in ss]), rel=1e-15)
    # every client absent ends the run
    res = run_federated(x, y, h, FedConfig(clients=2, rounds=3, inner=1, batch_size=10, dropout={1: [0, 1]}))
    assert res.rounds == 0 and res.history == []


def test_classification_round_runs():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 4))
    y = (x[:, 0] > 0).astype(int) + (x[:, 1] > 0)
    h = init_hyper((4, 5, 3), "classification", rho0=0.5, seed=1)
    res = run_federated(x, y, h, FedConfig(clients=3, rounds=2, inner=2, batch_size=10), em.SparsityPolicy(0.5))
    assert res.rounds == 2 and em.active_groups(res.hyper) <= 4 and res.hyper.noise_var != 1.0
