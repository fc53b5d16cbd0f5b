import json

import numpy as np
import pytest
from scipy import stats

from gograd import distributions as D
from gograd.estimators import IntegrandSpec, go_gradient, rep_gradient
from gograd.statgraph import (
    GRAPH_INTEGRANDS,
    PRIMITIVES,
    Chain,
    GraphError,
    ParameterDomainError,
    StochasticGraph,
    StochasticNode,
    deep_go_gradient,
    forward_sample,
    graph_go_gradient,
    statistical_backprop,
)

import oracles

identity = IntegrandSpec(eval=lambda y: y[:, 0], grad=lambda y: np.ones_like(y))


def delta_chain(x=2.0, a=3.0, b=4.0):
    nodes = [
        StochasticNode("y", "Delta", ["x"], [{"op": "affine", "shape": [1, 1], "bias": False}]),
        StochasticNode("z", "Delta", ["y"], [{"op": "affine", "shape": [1, 1], "bias": False}]),
    ]
    return StochasticGraph(nodes, inputs={"x": [x]}, weights=[a, b])


def gaussian_chain(m=0.7):
    """lam ~ N(m, 1), y | lam ~ N(lam, 1); the single weight is m."""
    nodes = [
        StochasticNode("lam", "Normal", [], {"mu": [{"op": "affine", "shape": [0, 1]}], "sigma": 1.0}),
        StochasticNode("y", "Normal", ["lam"], {"mu": [{"op": "identity"}], "sigma": 1.0}),
    ]
    return StochasticGraph(nodes, weights=[m])


def gamma_poisson_chain(alpha=2.5):
    nodes = [
        StochasticNode("lam", "Gamma", [], {"alpha": [{"op": "affine", "shape": [0, 1]}], "beta": 1.0}),
        StochasticNode("y", "Poisson", ["lam"], {"lam": [{"op": "identity"}]}),
    ]
    return StochasticGraph(nodes, weights=[alpha])


@pytest.fixture
def rng():
    return np.random.default_rng(77)


class TestForward:
    def test_delta_chain_values(self, rng):
        a = forward_sample(delta_chain(), rng)
        assert a["y"][0, 0] == 6.0
        assert a["z"][0, 0] == 24.0

    def test_gaussian_marginal(self, rng):
        a = forward_sample(gaussian_chain(0.7), rng, 100_000)
        assert stats.kstest(a["y"][:, 0], stats.norm(0.7, np.sqrt(2)).cdf).pvalue > 1e-3

    def test_out_of_domain_parameter(self, rng):
        nodes = [StochasticNode("g", "Gamma", [], {"alpha": [{"op": "affine", "shape": [0, 1]}], "beta": 1.0})]
        g = StochasticGraph(nodes, weights=[-1.0])
        with pytest.raises(ParameterDomainError):
            forward_sample(g, rng)

    def test_softplus_terminal_keeps_domain(self, rng):
        nodes = [StochasticNode("g", "Gamma", [], {"alpha": [{"op": "affine", "shape": [0, 1]}, {"op": "softplus"}],
                                                   "beta": [{"op": "affine", "shape": [0, 1]}, {"op": "exp"}]})]
        g = StochasticGraph(nodes, weights=[-5.0, -3.0])
        assert np.all(forward_sample(g, rng, 100)["g"] > 0)


class TestValidation:
    def test_discrete_internal_rejected(self):
        nodes = [
            StochasticNode("b", "Bernoulli", [], {"p": 0.5}),
            StochasticNode("y", "Normal", ["b"], {"mu": [{"op": "identity"}], "sigma": 1.0}),
        ]
        with pytest.raises(GraphError, match="discrete internal"):
            StochasticGraph(nodes)

    def test_cycle_rejected(self):
        nodes = [
            StochasticNode("a", "Delta", ["b"], [{"op": "identity"}]),
            StochasticNode("b", "Delta", ["a"], [{"op": "identity"}]),
        ]
        with pytest.raises(GraphError, match="cycle"):
            StochasticGraph(nodes)

    def test_unknown_parent(self):
        with pytest.raises(GraphError):
            StochasticGraph([StochasticNode("a", "Delta", ["ghost"], [{"op": "identity"}])])

    def test_declared_role_mismatch(self):
        nodes = [StochasticNode("a", "Normal", [], {"mu": 0.0, "sigma": 1.0}, role="internal")]
        with pytest.raises(GraphError):
            StochasticGraph(nodes)

    def test_categorical_rejected(self):
        with pytest.raises(GraphError):
            StochasticGraph([StochasticNode("c", "Categorical", [], {"probs": [0.5, 0.5]})])

    def test_transform_width_mismatch(self):
        with pytest.raises(GraphError):
            StochasticGraph([StochasticNode("a", "Normal", [], [{"op": "affine", "shape": [0, 3]}])])

    def test_unknown_primitive(self):
        with pytest.raises(GraphError):
            StochasticGraph([StochasticNode("a", "Delta", [], [{"op": "relu"}])])

    def test_weight_count(self):
        with pytest.raises(GraphError):
            delta_chain().set_weights([1.0, 2.0, 3.0])

    def test_missing_leaf_D(self, rng):
        g = delta_chain()
        with pytest.raises(GraphError, match="missing"):
            statistical_backprop(g, forward_sample(g, rng), {})

    def test_leaf_D_shape(self, rng):
        g = delta_chain()
        with pytest.raises(GraphError):
            statistical_backprop(g, forward_sample(g, rng), {"z": np.ones((1, 2))})


class TestBackprop:
    def test_delta_chain_is_classic_backprop(self, rng):
        x, a, b = 2.0, 3.0, 4.0
        g = delta_chain(x, a, b)
        grad = statistical_backprop(g, forward_sample(g, rng), {"z": np.ones((1, 1))})
        np.testing.assert_allclose(grad[0], [b * x, a * x], rtol=0, atol=1e-12)

    def test_gaussian_chain_has_zero_variance(self, rng):
        est = deep_go_gradient(gaussian_chain(), identity, 1000, rng)
        assert np.all(est.samples == 1.0)

    def test_gaussian_chain_matches_marginal(self, rng):
        m, n = 0.7, 100_000
        deep = deep_go_gradient(gaussian_chain(m), GRAPH_INTEGRANDS["sum_squares"], n, rng)
        single = go_gradient([D.Normal(m, np.sqrt(2.0))], GRAPH_INTEGRANDS["sum_squares"], n, rng)
        assert abs(deep.per_param[0] - single.per_param[0]) <= 5 * np.hypot(deep.se[0], single.se[0])
        assert abs(deep.per_param[0] - 2 * m) <= 5 * deep.se[0]

    def test_gamma_poisson_chain(self, rng):
        est = deep_go_gradient(gamma_poisson_chain(2.5), identity, 200_000, rng)
        assert abs(est.per_param[0] - 1.0) <= 5 * est.se[0]

    @pytest.mark.parametrize("family, params", [("Normal", (0.4, 1.3)), ("Gamma", (2.0, 1.5))])
    def test_single_layer_is_go(self, family, params):
        names = D._REGISTRY[family].param_names
        node = StochasticNode("y", family, [], {k: [{"op": "affine", "shape": [0, 1]}] for k in names})
        g = StochasticGraph([node], weights=[params[0], params[1]])
        f = GRAPH_INTEGRANDS["gaussian_bump"]
        deep = deep_go_gradient(g, f, 500, np.random.default_rng(4))
        flat = go_gradient([D._REGISTRY[family](*params)], f, 500, np.random.default_rng(4))
        np.testing.assert_array_equal(deep.samples, flat.samples)

    def test_delta_over_normal_is_rep(self):
        # y = exp(s) * lam + c with lam ~ N(m, sigma)
        m, sigma, s, c = 0.3, 1.2, 0.4, -0.5
        nodes = [
            StochasticNode("lam", "Normal", [], {"mu": [{"op": "affine", "shape": [0, 1]}],
                                                 "sigma": [{"op": "affine", "shape": [0, 1]}]}),
            StochasticNode("y", "Delta", ["lam"], [{"op": "scale_positive"}, {"op": "affine", "shape": [1, 1]}]),
        ]
        g = StochasticGraph(nodes, weights=[m, sigma, s, 1.0, c])
        f = GRAPH_INTEGRANDS["gaussian_bump"]
        deep = deep_go_gradient(g, f, 300, np.random.default_rng(8))
        # Rep through the composed map y = exp(s)(m + sigma eps) + c
        scale = np.exp(s)
        inner = IntegrandSpec(eval=lambda lam: f.eval(scale * lam + c), grad=lambda lam: scale * f.grad(scale * lam + c))
        rep = rep_gradient([D.Normal(m, sigma)], inner, 300, np.random.default_rng(8))
        np.testing.assert_allclose(deep.samples[:, :2], rep.samples, rtol=1e-12, atol=1e-12)

    def test_non_chain_rejected(self, rng):
        nodes = [
            StochasticNode("a", "Normal", [], {"mu": 0.0, "sigma": 1.0}),
            StochasticNode("b", "Normal", [], {"mu": 0.0, "sigma": 1.0}),
            StochasticNode("c", "Normal", ["a", "b"], {"mu": [{"op": "affine", "shape": [2, 1]}], "sigma": 1.0}),
        ]
        with pytest.raises(GraphError):
            deep_go_gradient(StochasticGraph(nodes), identity, 10, rng)

    def test_bp_is_linear(self, rng):
        g = gaussian_chain()
        a = forward_sample(g, rng, 50)
        one = statistical_backprop(g, a, {"y": np.full((50, 1), 0.7)})
        two = statistical_backprop(g, a, {"y": np.full((50, 1), 1.4)})
        np.testing.assert_array_equal(two, 2 * one)

    def test_children_contributions_sum(self, rng):
        # one Normal parent feeding two Normal leaves; f = y1 + y2 so d/dm = 2
        nodes = [
            StochasticNode("lam", "Normal", [], {"mu": [{"op": "affine", "shape": [0, 1]}], "sigma": 1.0}),
            StochasticNode("y1", "Normal", ["lam"], {"mu": [{"op": "identity"}], "sigma": 1.0}),
            StochasticNode("y2", "Normal", ["lam"], {"mu": [{"op": "identity"}], "sigma": 1.0}),
        ]
        est = graph_go_gradient(StochasticGraph(nodes, weights=[0.1]), GRAPH_INTEGRANDS["sum"], 100, rng)
        assert np.all(est.samples == 2.0)

    def test_internal_node_read_by_f(self, rng):
        # f = lam + y reads the internal node directly: d/dm E = 2
        est = graph_go_gradient(gaussian_chain(), GRAPH_INTEGRANDS["sum"], 100, rng, reads=["lam", "y"])
        assert np.all(est.samples == 2.0)

    def test_random_delta_graphs_match_autodiff(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            g = oracles.random_delta_graph(rng)
            est = graph_go_gradient(g, GRAPH_INTEGRANDS["sum_squares"], 1, rng)
            ref = oracles.jax_delta_gradient(g, g.leaves())
            np.testing.assert_allclose(est.per_param, ref, rtol=1e-12, atol=1e-12)


class TestJacobians:
    @pytest.mark.parametrize("op", PRIMITIVES)
    def test_primitive_vjp_matches_fd(self, op, rng):
        d_in = 3
        spec = {"op": op, "shape": [d_in, 2]} if op == "affine" else {"op": op}
        self._check(Chain([spec], d_in), rng)

    def test_composed_chain(self, rng):
        steps = [{"op": "affine", "shape": [3, 4]}, {"op": "tanh"}, {"op": "scale_positive"},
                 {"op": "affine", "shape": [4, 2]}, {"op": "softplus"}, {"op": "sigmoid"}, {"op": "exp"}]
        self._check(Chain(steps, 3), rng, draws=1000)

    @staticmethod
    def _check(chain, rng, draws=200):
        n = draws
        x = rng.normal(size=(n, chain.in_dim))
        w = rng.normal(scale=0.5, size=chain.n_weights)
        u = rng.normal(size=(n, chain.out_dim))
        acts = chain.forward(x, w)
        gx, gw = chain.vjp(u, acts, w)

        def obj_x(xx):
            return (chain.forward(xx, w)[-1] * u).sum(axis=1)

        for j in range(chain.in_dim):
            h = 1e-5 * np.maximum(np.abs(x[:, j]), 1.0)
            xp, xm = x.copy(), x.copy()
            xp[:, j] += h
            xm[:, j] -= h
            np.testing.assert_allclose(gx[:, j], (obj_x(xp) - obj_x(xm)) / (2 * h), atol=1e-6, rtol=1e-6)
        for k in range(chain.n_weights):
            h = 1e-5 * max(abs(w[k]), 1.0)
            wp, wm = w.copy(), w.copy()
            wp[k] += h
            wm[k] -= h
            fd = ((chain.forward(x, wp)[-1] - chain.forward(x, wm)[-1]) * u).sum(axis=1) / (2 * h)
            np.testing.assert_allclose(gw[:, k], fd, atol=1e-6, rtol=1e-6)


class TestSerialization:
    def test_json_round_trip(self, rng):
        g = oracles.random_delta_graph(rng)
        doc = json.loads(json.dumps(g.to_json()))
        back = StochasticGraph.from_json(doc)
        np.testing.assert_array_equal(back.weights, g.weights)
        assert back.to_json() == g.to_json()

    def test_missing_field(self):
        with pytest.raises(GraphError):
            StochasticGraph.from_json({"nodes": [{"id": "a", "family": "Delta"}]})

    def test_weight_checkpoint(self, tmp_path, rng):
        g = gamma_poisson_chain(3.25)
        g.save_weights(tmp_path / "w")
        raw = (tmp_path / "w.bin").read_bytes()
        assert np.frombuffer(raw, dtype="<f8").tolist() == [3.25]
        other = gamma_poisson_chain(1.0)
        other.load_weights(tmp_path / "w")
        assert other.weights.tolist() == [3.25]
        with pytest.raises(GraphError):
            delta_chain().load_weights(tmp_path / "w")
