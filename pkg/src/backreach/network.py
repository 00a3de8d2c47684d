"""Feedforward ReLU network model for the control policy.

Networks are immutable after construction; evaluation and interval bound
propagation are pure functions.  The final layer is always affine (identity
activation), matching the policy structure the whole pipeline assumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geom import Hyperrectangle

RELU = "relu"
IDENTITY = "id"
_ACTIVATIONS = (RELU, IDENTITY)


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        if W.shape[0] != b.size:
            raise ValueError(f"bias length {b.size} != row count {W.shape[0]}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        W.setflags(write=False)
        b.setflags(write=False)

    @property
    def out_dim(self):
        return self.W.shape[0]

    @property
    def in_dim(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class FeedforwardNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ValueError(
                    f"layer dimension chain broken: {prev.out_dim} -> {nxt.in_dim}"
                )
        if layers[-1].activation != IDENTITY:
            raise ValueError("final layer must have identity activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_neurons(self) -> int:
        return sum(l.out_dim for l in self.layers[:-1])


def evaluate(net: FeedforwardNetwork, x) -> np.ndarray:
    """Exact forward pass.  Accepts a single vector or an (n, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.input_dim:
        raise ValueError(f"input dim {a.shape[1]} != network input {net.input_dim}")
    for layer in net.layers:
        a = a @ layer.W.T + layer.b
        if layer.activation == RELU:
            a = np.maximum(a, 0.0)
    return a[0] if single else a


@dataclass(frozen=True)
class LayerIntervals:
    """Sound pre-activation bounds l <= z <= u per layer over a box domain."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        for l, u in zip(self.lower, self.upper):
            if np.any(l > u):
                raise ValueError("crossed pre-activation bounds")


def interval_bounds(net: FeedforwardNetwork, domain: Hyperrectangle) -> LayerIntervals:
    """Interval arithmetic pass: pre-activation bounds for every layer.

    Sound for every x in the domain; used to decide stable/unstable neurons
    for both the affine relaxation and the exact mixed-integer encoding.
    """
    if domain.dim != net.input_dim:
        raise ValueError("domain dimension != network input dimension")
    lo, hi = domain.lo, domain.hi
    lowers, uppers = [], []
    for layer in net.layers:
        Wp = np.maximum(layer.W, 0.0)
        Wn = np.minimum(layer.W, 0.0)
        zl = Wp @ lo + Wn @ hi + layer.b
        zu = Wp @ hi + Wn @ lo + layer.b
        lowers.append(zl)
        uppers.append(zu)
        if layer.activation == RELU:
            lo, hi = np.maximum(zl, 0.0), np.maximum(zu, 0.0)
        else:
            lo, hi = zl, zu
    return LayerIntervals(tuple(lowers), tuple(uppers))


def output_interval(net: FeedforwardNetwork, domain: Hyperrectangle) -> Hyperrectangle:
    bounds = interval_bounds(net, domain)
    return Hyperrectangle(bounds.lower[-1], bounds.upper[-1])


def save_network(net: FeedforwardNetwork, path) -> None:
    obj = {
        "input_dim": net.input_dim,
        "layers": [
            {"W": l.W.tolist(), "b": l.b.tolist(), "act": l.activation}
            for l in net.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_network(path) -> FeedforwardNetwork:
    with open(path) as fh:
        obj = json.load(fh)
    return network_from_json(obj)


def network_from_json(obj) -> FeedforwardNetwork:
    try:
        input_dim = int(obj["input_dim"])
        raw_layers = obj["layers"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed weight file: {exc}") from exc
    layers = []
    for i, spec in enumerate(raw_layers):
        act = spec.get("act", IDENTITY)
        if act not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {act!r} in layer {i}")
        layers.append(Layer(np.asarray(spec["W"], float), np.asarray(spec["b"], float), act))
    net = FeedforwardNetwork(tuple(layers))
    if net.input_dim != input_dim:
        raise ValueError(
            f"declared input_dim {input_dim} != first layer width {net.input_dim}"
        )
    return net


def network_to_json(net: FeedforwardNetwork) -> dict:
    return {
        "input_dim": net.input_dim,
        "layers": [
            {"W": l.W.tolist(), "b": l.b.tolist(), "act": l.activation}
            for l in net.layers
        ],
    }
