import math

import numpy as np
import pytest
from scipy.stats import norm

from prunesearch import (
    EncodingError,
    KernelConfig,
    Observation,
    encode_graph,
    expected_improvement,
    fit,
    kernel,
    mean_gradient,
    predict,
    random_proposal,
)
from prunesearch.gp import (
    ModelFitError,
    ei_from_moments,
    feature_gradient,
    fit_graphs,
    predict_features,
    predict_many,
)
from prunesearch.network import LayerAssignment, LayerSpec, NetworkSpec, ProposalGraph, PruningProposal
from prunesearch.wl import wl_features

from conftest import chain


def distinct_proposals(net, n, rng):
    out, seen = [], set()
    while len(out) < n:
        p = random_proposal(net, rng)
        if p in seen:
            continue
        try:
            encode_graph(p)
        except EncodingError:
            continue
        seen.add(p)
        out.append(p)
    return out


def observations(net, n, rng):
    ps = distinct_proposals(net, n, rng)
    return [Observation(p, 0.0, 0.0, float(r)) for p, r in zip(ps, rng.normal(50, 10, n))]


def closed_form(obs, query, cfg, noise):
    """Direct GP posterior: pairwise kernel calls and a dense solve."""
    graphs = [encode_graph(o.proposal) for o in obs]
    gq = encode_graph(query)
    y = np.array([o.reward for o in obs])
    mu, sd = y.mean(), y.std() or 1.0
    ys = (y - mu) / sd
    K = np.array([[kernel(a, b, cfg) for b in graphs] for a in graphs])
    k = np.array([kernel(gq, b, cfg) for b in graphs])
    A = K + noise * np.eye(len(graphs))
    mean = k @ np.linalg.solve(A, ys)
    var = kernel(gq, gq, cfg) - k @ np.linalg.solve(A, k)
    return mean * sd + mu, max(var, 0.0) * sd**2


class TestFit:
    def test_single_observation_interpolates(self, rng):
        net = chain(4)
        obs = observations(net, 1, rng)
        m = fit(obs, noise=0.0)
        mean, var = predict(m, obs[0].proposal)
        assert mean == pytest.approx(obs[0].reward, abs=1e-12)
        assert var <= 1e-8
        assert m.reward_std == 1.0

    def test_two_observations_interpolate(self, rng):
        net = chain(4)
        obs = observations(net, 2, rng)
        m = fit(obs, noise=0.0)
        for o in obs:
            assert abs(predict(m, o.proposal)[0] - o.reward) <= 1e-6

    def test_residual_invariant(self, rng):
        obs = observations(chain(8), 30, rng)
        m = fit(obs, noise=1e-6)
        K = np.array([[kernel(a, b, m.kernel_cfg) for b in m.train_graphs] for a in m.train_graphs])
        A = K + m.noise_variance * np.eye(len(obs))
        y = m.train_rewards_standardized
        assert np.linalg.norm(A @ m.weights - y) <= 1e-8 * np.linalg.norm(y)
        assert abs(y.mean()) < 1e-12 and abs(y.std() - 1) < 1e-12

    @pytest.mark.parametrize("normalize", [True, False])
    def test_matches_closed_form(self, rng, normalize):
        net = chain(6)
        cfg = KernelConfig(h=2, normalize=normalize, signal_variance=1.7)
        obs = observations(net, 5, rng)
        m = fit(obs, cfg, noise=1e-6)
        train = {o.proposal for o in obs}
        queries = [q for q in distinct_proposals(net, 10, rng) if q not in train][:5]
        for q in queries:
            mean, var = predict(m, q)
            em, ev = closed_form(obs, q, cfg, 1e-6)
            assert mean == pytest.approx(em, abs=1e-8)
            assert var == pytest.approx(ev, abs=1e-8)

    def test_predict_many_agrees(self, rng):
        net = chain(6)
        obs = observations(net, 8, rng)
        m = fit(obs)
        qs = distinct_proposals(net, 12, rng)
        means, vars_ = predict_many(m, [encode_graph(q) for q in qs])
        for q, a, b in zip(qs, means, vars_):
            assert (a, b) == pytest.approx(predict(m, q), abs=1e-12)

    def test_prior_recovery(self):
        net1 = NetworkSpec("n1", (LayerSpec("x", "conv", 1, 1),))
        net2 = NetworkSpec("n2", (LayerSpec("x", "dense", 1, 1),))
        cfg = KernelConfig(signal_variance=2.0)
        obs = [
            Observation(PruningProposal(net1, {"x": LayerAssignment("none", 1)}), 0, 0, 10.0),
            Observation(PruningProposal(net1, {"x": LayerAssignment("filter", 2)}), 0, 0, 14.0),
        ]
        m = fit(obs, cfg, noise=0.0)
        q = PruningProposal(net2, {"x": LayerAssignment("filter", 2)})
        mean, var = predict(m, q)
        assert mean == pytest.approx(12.0, abs=1e-12)
        assert var == pytest.approx(2.0 * m.reward_std**2, abs=1e-12)

    def test_duplicate_features_need_jitter(self):
        g = ProposalGraph(("a", "b"), ((0, 1),), ("x", "y"))
        m = fit_graphs([g, g], [1.0, 3.0], noise=0.0)
        assert m.noise_variance > 0
        assert predict_features(m, wl_features(g, 2).counts)[0] == pytest.approx(2.0, abs=1e-3)

    def test_unfittable(self):
        g = ProposalGraph(("a",), (), ("x",))
        with pytest.raises(ModelFitError):
            fit_graphs([g, g], [1.0, float("nan")], noise=0.0)

    def test_needs_data(self):
        with pytest.raises(ModelFitError):
            fit([])


class TestExpectedImprovement:
    def test_known_point_has_none(self, rng):
        obs = observations(chain(4), 3, rng)
        m = fit(obs, noise=0.0)
        best = max(obs, key=lambda o: o.reward)
        assert expected_improvement(m, best.proposal, best.reward, 0.0) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_sigma(self):
        assert ei_from_moments(np.array([15.0]), np.array([0.0]), 10.0, 0.0)[0] == 5.0
        assert ei_from_moments(np.array([5.0]), np.array([0.0]), 10.0, 0.0)[0] == 0.0

    def test_standard_normal(self):
        v = ei_from_moments(np.array([0.0]), np.array([1.0]), 0.0, 0.0)[0]
        assert v == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
        assert v == pytest.approx(0.39894, abs=1e-5)

    def test_closed_form(self):
        mu, sigma, best, xi = 1.3, 0.7, 1.0, 0.05
        z = (mu - best - xi) / sigma
        expected = (mu - best - xi) * norm.cdf(z) + sigma * norm.pdf(z)
        assert ei_from_moments(np.array([mu]), np.array([sigma**2]), best, xi)[0] == pytest.approx(expected)

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        net = chain(6)
        count = 0
        for _ in range(10):
            obs = observations(net, int(rng.integers(2, 12)), rng)
            m = fit(obs, noise=float(rng.choice([0.0, 1e-6, 1e-2])))
            best = max(o.reward for o in obs)
            qs = [random_proposal(net, rng) for _ in range(100)]
            for q in qs:
                try:
                    ei = expected_improvement(m, q, best + rng.normal(0, 5), float(rng.uniform(0, 1)))
                except EncodingError:
                    continue
                assert ei >= 0.0
                count += 1
        assert count >= 900

    def test_negative_xi_rejected(self, rng):
        obs = observations(chain(3), 2, rng)
        with pytest.raises(ValueError):
            expected_improvement(fit(obs), obs[0].proposal, 0.0, -0.1)

    def test_affine_invariance_of_ranking(self, rng):
        net = chain(6)
        obs = observations(net, 8, rng)
        a, b = 3.5, -20.0
        obs2 = [Observation(o.proposal, 0, 0, a * o.reward + b) for o in obs]
        m1, m2 = fit(obs), fit(obs2)
        best = max(o.reward for o in obs)
        xi = 0.1
        pool = distinct_proposals(net, 40, rng)
        e1 = [expected_improvement(m1, p, best, xi) for p in pool]
        e2 = [expected_improvement(m2, p, a * best + b, a * xi) for p in pool]
        np.testing.assert_allclose(np.array(e2), a * np.array(e1), rtol=1e-6, atol=1e-10)
        assert np.array_equal(np.argsort(e1, kind="stable"), np.argsort(np.array(e2) / a, kind="stable"))


def fd_check(m, counts, eps=1e-5):
    grads = feature_gradient(m, counts)
    for key in counts:
        up = dict(counts)
        dn = dict(counts)
        up[key] += eps
        dn[key] -= eps
        fd = (predict_features(m, up)[0] - predict_features(m, dn)[0]) / (2 * eps)
        scale = max(abs(fd), abs(grads[key]), 1e-6)
        assert abs(grads[key] - fd) / scale <= 1e-4, (key, grads[key], fd)


class TestGradient:
    def test_zero_weights(self, rng):
        obs = observations(chain(4), 1, rng)
        m = fit(obs)
        assert np.all(m.weights == 0)
        g = mean_gradient(m, random_proposal(chain(4), np.random.default_rng(1)))
        assert all(v == 0.0 for v in g.values())

    def test_linear_oracle(self, rng):
        net = chain(5)
        cfg = KernelConfig(h=2, normalize=False)
        obs = observations(net, 6, rng)
        m = fit(obs, cfg)
        q = distinct_proposals(net, 1, rng)[0]
        counts = wl_features(encode_graph(q), 2).counts
        grads = feature_gradient(m, counts)
        for key in counts:
            expected = sum(
                w * wl_features(g, 2).counts.get(key, 0) for w, g in zip(m.weights, m.train_graphs)
            ) * m.reward_std
            assert grads[key] == pytest.approx(expected, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("normalize", [True, False])
    def test_finite_differences(self, rng, normalize):
        net = chain(6)
        cfg = KernelConfig(h=2, normalize=normalize)
        for _ in range(5):
            m = fit(observations(net, 7, rng), cfg)
            q = distinct_proposals(net, 1, rng)[0]
            fd_check(m, wl_features(encode_graph(q), 2).counts)

    def test_node_aggregation(self, rng):
        net = chain(5, skippable=False)
        m = fit(observations(net, 6, rng))
        q = random_proposal(net, rng)
        g = encode_graph(q)
        f = wl_features(g, 2)
        fg = feature_gradient(m, f.counts)
        ng = mean_gradient(m, q)
        assert list(ng) == list(g.layer_ids)
        for lid, keys in zip(g.layer_ids, f.node_keys):
            assert ng[lid] == pytest.approx(sum(fg[k] for k in keys))

    def test_skipped_layers_have_no_entry(self, rng):
        net = chain(3)
        m = fit(observations(net, 4, rng))
        q = PruningProposal(net, {"l0": LayerAssignment("none", 1), "l1": LayerAssignment("none", "skip"),
                                  "l2": LayerAssignment("filter", 2)})
        assert set(mean_gradient(m, q)) == {"l0", "l2"}
