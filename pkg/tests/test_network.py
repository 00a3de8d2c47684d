import json

import numpy as np
import pytest

from backreach.geom import Hyperrectangle, sample
from backreach.network import (
    FeedforwardNetwork,
    Layer,
    evaluate,
    interval_bounds,
    load_network,
    save_network,
)


def random_net(dims, rng, scale=1.0):
    layers = []
    for i in range(len(dims) - 1):
        act = "relu" if i < len(dims) - 2 else "id"
        layers.append(
            Layer(scale * rng.normal(size=(dims[i + 1], dims[i])),
                  scale * rng.normal(size=dims[i + 1]), act)
        )
    return FeedforwardNetwork(tuple(layers))


def forward_oracle(net, x):
    """Independent forward pass used to cross-check evaluate()."""
    a = np.asarray(x, float)
    for layer in net.layers:
        z = np.empty(layer.out_dim)
        for k in range(layer.out_dim):
            acc = layer.b[k]
            for i in range(layer.in_dim):
                acc += layer.W[k, i] * a[i]
            z[k] = acc
        a = np.where(z > 0, z, 0.0) if layer.activation == "relu" else z
    return a


class TestEvaluate:
    def test_single_affine_layer(self):
        net = FeedforwardNetwork((Layer([[2.0]], [1.0], "id"),))
        assert evaluate(net, [3.0])[0] == 7.0

    def test_relu_kills_negative(self):
        net = FeedforwardNetwork(
            (Layer([[1.0]], [0.0], "relu"), Layer([[1.0]], [0.0], "id"))
        )
        assert evaluate(net, [-2.0])[0] == 0.0
        assert evaluate(net, [3.0])[0] == 3.0

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(0)
        net = random_net([2, 5, 5, 2], rng)
        for _ in range(20):
            x = rng.normal(size=2)
            assert np.allclose(evaluate(net, x), forward_oracle(net, x), atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        net = random_net([3, 4, 2], rng)
        xs = rng.normal(size=(10, 3))
        batch = evaluate(net, xs)
        for i in range(10):
            assert np.allclose(batch[i], evaluate(net, xs[i]))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(2)
        net = random_net([3, 4, 2], rng)
        with pytest.raises(ValueError):
            evaluate(net, [1.0, 2.0])


class TestIntervalBounds:
    def test_affine(self):
        net = FeedforwardNetwork((Layer([[2.0]], [1.0], "id"),))
        b = interval_bounds(net, Hyperrectangle([0.0], [1.0]))
        assert b.lower[0][0] == 1.0 and b.upper[0][0] == 3.0

    def test_difference(self):
        net = FeedforwardNetwork((Layer([[1.0, -1.0]], [0.0], "id"),))
        b = interval_bounds(net, Hyperrectangle([0, 0], [1, 1]))
        assert b.lower[0][0] == -1.0 and b.upper[0][0] == 1.0

    def test_contains_sampled_preactivations(self):
        rng = np.random.default_rng(3)
        net = random_net([2, 5, 5, 1], rng)
        dom = Hyperrectangle([-1.5, 0.5], [0.5, 2.0])
        b = interval_bounds(net, dom)
        xs = sample(dom, 10_000, rng)
        a = xs
        for m, layer in enumerate(net.layers):
            z = a @ layer.W.T + layer.b
            assert np.all(z >= b.lower[m] - 1e-9)
            assert np.all(z <= b.upper[m] + 1e-9)
            a = np.maximum(z, 0) if layer.activation == "relu" else z

    def test_monotone_under_shrinking(self):
        rng = np.random.default_rng(4)
        net = random_net([2, 6, 6, 2], rng)
        parent = Hyperrectangle([-2, -2], [2, 2])
        child = Hyperrectangle([-1, 0], [0.5, 1.5])
        bp = interval_bounds(net, parent)
        bc = interval_bounds(net, child)
        for m in range(len(net.layers)):
            assert np.all(bc.lower[m] >= bp.lower[m] - 1e-12)
            assert np.all(bc.upper[m] <= bp.upper[m] + 1e-12)

    def test_output_within_interval_many_nets(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            net = random_net([2, 4, 3, 1], rng)
            c = rng.normal(size=2)
            dom = Hyperrectangle(c - rng.uniform(0.1, 2), c + rng.uniform(0.1, 2))
            b = interval_bounds(net, dom)
            xs = sample(dom, 300, rng)
            out = evaluate(net, xs)
            assert np.all(out >= b.lower[-1] - 1e-9)
            assert np.all(out <= b.upper[-1] + 1e-9)


class TestIO:
    def test_roundtrip_identity(self, tmp_path):
        rng = np.random.default_rng(6)
        net = random_net([2, 5, 5, 1], rng)
        p = tmp_path / "net.json"
        save_network(net, p)
        back = load_network(p)
        for a, b in zip(net.layers, back.layers):
            assert np.array_equal(a.W, b.W)
            assert np.array_equal(a.b, b.b)
            assert a.activation == b.activation

    def test_mismatched_bias_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(
            {"input_dim": 1, "layers": [{"W": [[1.0]], "b": [0.0, 1.0], "act": "id"}]}
        ))
        with pytest.raises(ValueError):
            load_network(p)

    def test_unsupported_activation_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(
            {"input_dim": 1,
             "layers": [{"W": [[1.0]], "b": [0.0], "act": "tanh"},
                        {"W": [[1.0]], "b": [0.0], "act": "id"}]}
        ))
        with pytest.raises(ValueError, match="activation"):
            load_network(p)

    def test_broken_chain_rejected(self):
        with pytest.raises(ValueError, match="chain"):
            FeedforwardNetwork(
                (Layer(np.ones((3, 2)), np.zeros(3), "relu"),
                 Layer(np.ones((1, 4)), np.zeros(1), "id"))
            )

    def test_final_layer_must_be_identity(self):
        with pytest.raises(ValueError):
            FeedforwardNetwork((Layer([[1.0]], [0.0], "relu"),))
