"""Exact mixed-integer encoding of a ReLU network.

Given sound pre-activation intervals, the feasible set projected onto
(input, output) variables equals the graph of the network over the domain:
stable neurons become equalities or fixed zeros, unstable neurons get one
binary each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import IDENTITY, RELU, FeedforwardNetwork, LayerIntervals
from .build import ModelBuilder


@dataclass
class ReluEncoding:
    input_vars: list
    output_vars: list
    post_vars: list        # per hidden layer, list of post-activation vars
    binaries: list


def encode_relu_bigm(
    builder: ModelBuilder,
    net: FeedforwardNetwork,
    input_vars: list,
    bounds: LayerIntervals,
    name: str = "nn",
) -> ReluEncoding:
    """Append the exact big-M encoding of ``net`` to ``builder``.

    ``input_vars`` are existing builder variables for the network input;
    ``bounds`` must be sound for every input the surrounding model allows.
    """
    if len(input_vars) != net.input_dim:
        raise ValueError("input variable count != network input dimension")
    for l, u in zip(bounds.lower, bounds.upper):
        if np.any(l > u):
            raise ValueError("crossed pre-activation bounds")

    binaries_before = set(builder.binaries)
    prev = list(input_vars)
    post_vars = []
    for m, layer in enumerate(net.layers[:-1]):
        if layer.activation != RELU:
            raise ValueError("hidden layers must be ReLU")
        zl, zu = bounds.lower[m], bounds.upper[m]
        ys = []
        for k in range(layer.out_dim):
            coefs = {
                prev[i]: layer.W[k, i]
                for i in range(layer.in_dim)
                if layer.W[k, i] != 0.0
            }
            ys.append(
                builder.encode_relu(
                    coefs, float(layer.b[k]), float(zl[k]), float(zu[k]),
                    name=f"{name}.l{m}.y{k}",
                )
            )
        post_vars.append(ys)
        prev = ys

    last = net.layers[-1]
    if last.activation != IDENTITY:
        raise ValueError("final layer must be identity")
    zl, zu = bounds.lower[-1], bounds.upper[-1]
    out_vars = []
    for k in range(last.out_dim):
        v = builder.new_var(float(zl[k]), float(zu[k]), f"{name}.out{k}")
        coefs = {v: 1.0}
        for i in range(last.in_dim):
            if last.W[k, i] != 0.0:
                coefs[prev[i]] = coefs.get(prev[i], 0.0) - last.W[k, i]
        builder.add_eq(coefs, float(last.b[k]))
        out_vars.append(v)

    new_binaries = sorted(builder.binaries - binaries_before)
    return ReluEncoding(list(input_vars), out_vars, post_vars, new_binaries)
