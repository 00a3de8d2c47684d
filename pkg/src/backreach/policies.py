"""Construction of exact piecewise-linear ReLU control policies.

The paper-style policies are rebuilt as ReLU networks that *exactly* encode
piecewise-linear functions: clips, min/max gates, 1-D interpolants, and 2-D
interpolants on triangulated grids.  A tiny compiler turns such expressions
into network layers; values that must cross a ReLU layer unchanged are
carried with offset neurons (relu(z - lo) + lo), which stay stable for every
input in the compile box so affine relaxations lose nothing on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Hyperrectangle
from .network import IDENTITY, RELU, FeedforwardNetwork, Layer


@dataclass(frozen=True)
class Handle:
    """Affine function of one layer's channels, with bounds over the box."""

    layer: int
    coefs: tuple     # ((channel, weight), ...)
    const: float
    lo: float
    hi: float

    def key(self):
        return (self.layer, self.coefs, self.const)


class PwlBuilder:
    """Compiles piecewise-linear expressions into an exact ReLU network.

    All handles are exact for inputs inside ``box``; outside, carried values
    saturate (the network remains a total function, just not the intended
    expression).
    """

    def __init__(self, box: Hyperrectangle):
        self.box = box
        self.n_inputs = box.dim
        # neurons[k] = list of (coefs over layer-k channels, bias) for layer k+1
        self.neurons = []
        self._relu_cache = {}
        self._lift_cache = {}

    # -- handle constructors --

    def input(self, i: int) -> Handle:
        return Handle(0, ((i, 1.0),), 0.0, float(self.box.lo[i]), float(self.box.hi[i]))

    def const(self, v: float) -> Handle:
        return Handle(0, (), float(v), float(v), float(v))

    def lin(self, terms, const=0.0) -> Handle:
        """Affine combination of handles: sum w_i * h_i + const."""
        terms = [(float(w), h) for w, h in terms if w != 0.0]
        layer = max([h.layer for _, h in terms], default=0)
        coefs = {}
        lo = hi = float(const)
        for w, h in terms:
            h = self.lift(h, layer)
            for ch, cw in h.coefs:
                coefs[ch] = coefs.get(ch, 0.0) + w * cw
            const += w * h.const
            lo += w * h.lo if w >= 0 else w * h.hi
            hi += w * h.hi if w >= 0 else w * h.lo
        cleaned = tuple(sorted((c, w) for c, w in coefs.items() if w != 0.0))
        return Handle(layer, cleaned, float(const), lo, hi)

    # -- layer mechanics --

    def _new_neuron(self, layer: int, coefs, bias) -> int:
        while len(self.neurons) < layer:
            self.neurons.append([])
        self.neurons[layer - 1].append((dict(coefs), float(bias)))
        return len(self.neurons[layer - 1]) - 1

    def relu(self, h: Handle) -> Handle:
        """max(0, h) as a neuron in the next layer."""
        key = ("relu", h.key())
        hit = self._relu_cache.get(key)
        if hit is not None:
            return hit
        ch = self._new_neuron(h.layer + 1, h.coefs, h.const)
        out = Handle(h.layer + 1, ((ch, 1.0),), 0.0, max(0.0, h.lo), max(0.0, h.hi))
        self._relu_cache[key] = out
        return out

    def lift(self, h: Handle, layer: int) -> Handle:
        """Same value re-expressed over a later layer's channels.

        Constants lift for free; other handles ride one offset-carry neuron
        per layer (stable-active inside the box, so exact and relaxation
        friendly).
        """
        if h.layer >= layer:
            return h
        if not h.coefs:
            return Handle(layer, (), h.const, h.lo, h.hi)
        key = (h.key(), layer)
        hit = self._lift_cache.get(key)
        if hit is not None:
            return hit
        cur = h
        while cur.layer < layer:
            r = self.relu(Handle(cur.layer, cur.coefs, cur.const - cur.lo, 0.0, cur.hi - cur.lo))
            cur = Handle(r.layer, r.coefs, cur.lo, cur.lo, cur.hi)
        self._lift_cache[key] = cur
        return cur

    # -- piecewise-linear primitives --

    def vmax(self, a: Handle, b: Handle) -> Handle:
        layer = max(a.layer, b.layer)
        a, b = self.lift(a, layer), self.lift(b, layer)
        r = self.relu(self.lin([(1.0, a), (-1.0, b)]))
        out = self.lin([(1.0, b), (1.0, r)])
        return Handle(out.layer, out.coefs, out.const, max(a.lo, b.lo), max(a.hi, b.hi))

    def vmin(self, a: Handle, b: Handle) -> Handle:
        layer = max(a.layer, b.layer)
        a, b = self.lift(a, layer), self.lift(b, layer)
        r = self.relu(self.lin([(1.0, a), (-1.0, b)]))
        out = self.lin([(1.0, a), (-1.0, r)])
        return Handle(out.layer, out.coefs, out.const, min(a.lo, b.lo), min(a.hi, b.hi))

    def vabs(self, h: Handle) -> Handle:
        r = self.relu(self.lin([(2.0, h)]))
        out = self.lin([(-1.0, h), (1.0, r)])
        lo = 0.0 if h.lo <= 0.0 <= h.hi else min(abs(h.lo), abs(h.hi))
        return Handle(out.layer, out.coefs, out.const, lo, max(abs(h.lo), abs(h.hi)))

    def clip(self, h: Handle, lo: float, hi: float) -> Handle:
        """clip(h, lo, hi) = lo + relu(h - lo) - relu(relu(h - lo) - (hi - lo))."""
        if lo > hi:
            raise ValueError("clip with lo > hi")
        r1 = self.relu(self.lin([(1.0, h)], -lo))
        r2 = self.relu(self.lin([(1.0, r1)], -(hi - lo)))
        out = self.lin([(1.0, r1), (-1.0, r2)], lo)
        return Handle(out.layer, out.coefs, out.const,
                      min(max(h.lo, lo), hi), min(max(h.hi, lo), hi))

    def pwl1d(self, h: Handle, xs, ys) -> Handle:
        """Piecewise-linear interpolant through (xs, ys); end slopes continue."""
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        if xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("need at least two strictly increasing nodes")
        slopes = np.diff(ys) / np.diff(xs)
        terms = [(slopes[0], h)]
        const = ys[0] - slopes[0] * xs[0]
        for i in range(1, xs.size - 1):
            d = slopes[i] - slopes[i - 1]
            if d == 0.0:
                continue
            terms.append((d, self.relu(self.lin([(1.0, h)], -xs[i]))))
        out = self.lin(terms, const)
        lo, hi = _pwl_range(xs, ys, slopes, h.lo, h.hi)
        return Handle(out.layer, out.coefs, out.const, lo, hi)

    # -- network assembly --

    def finish(self, outputs) -> FeedforwardNetwork:
        """Freeze layers and read the given handles as network outputs."""
        depth = max([h.layer for h in outputs] + [len(self.neurons)])
        outputs = [self.lift(h, depth) for h in outputs]
        layers = []
        widths = [self.n_inputs] + [len(layer) for layer in self.neurons]
        for k, neuron_defs in enumerate(self.neurons):
            W = np.zeros((len(neuron_defs), widths[k]))
            b = np.zeros(len(neuron_defs))
            for row, (coefs, bias) in enumerate(neuron_defs):
                for ch, w in coefs.items():
                    W[row, ch] = w
                b[row] = bias
            layers.append(Layer(W, b, RELU))
        W = np.zeros((len(outputs), widths[-1]))
        b = np.zeros(len(outputs))
        for row, h in enumerate(outputs):
            for ch, w in h.coefs:
                W[row, ch] = w
            b[row] = h.const
        layers.append(Layer(W, b, IDENTITY))
        return FeedforwardNetwork(tuple(layers))


def _pwl_range(xs, ys, slopes, lo, hi):
    """Range of the 1-D interpolant over [lo, hi]."""
    def val(z):
        if z <= xs[0]:
            return ys[0] + slopes[0] * (z - xs[0])
        if z >= xs[-1]:
            return ys[-1] + slopes[-1] * (z - xs[-1])
        return float(np.interp(z, xs, ys))
    cands = [val(lo), val(hi)]
    for x, y in zip(xs, ys):
        if lo <= x <= hi:
            cands.append(float(y))
    return min(cands), max(cands)


# --- 2-D grid interpolation --------------------------------------------------

def grid_interpolant(builder: PwlBuilder, xh: Handle, yh: Handle,
                     xnodes, ynodes, value_grids) -> list:
    """CPWL interpolants on the triangulated rectilinear grid.

    Cells are split along the (lower-left -> upper-right) diagonal.  The
    nodal hat functions are shared across all outputs; ``value_grids`` is a
    list of (len(xnodes), len(ynodes)) arrays of node values.  Returns one
    handle per value grid.
    """
    xnodes = np.asarray(xnodes, float)
    ynodes = np.asarray(ynodes, float)
    if np.any(np.diff(xnodes) <= 0) or np.any(np.diff(ynodes) <= 0):
        raise ValueError("grid nodes must be strictly increasing")
    nx, ny = xnodes.size, ynodes.size

    def spacing(nodes, i):
        left = nodes[i] - nodes[i - 1] if i > 0 else nodes[i + 1] - nodes[i]
        right = nodes[i + 1] - nodes[i] if i < nodes.size - 1 else nodes[i] - nodes[i - 1]
        return left, right

    # shared scaled distances d(z) = max((z - n)/right, -(z - n)/left)
    def dist(h, nodes, i):
        left, right = spacing(nodes, i)
        a, b = 1.0 / right, 1.0 / left
        r = builder.relu(builder.lin([((a + b), h)], -(a + b) * nodes[i]))
        out = builder.lin([(-b, h), (1.0, r)], b * nodes[i])
        return Handle(out.layer, out.coefs, out.const, 0.0, max(out.hi, 0.0))

    dxs = [dist(xh, xnodes, i) for i in range(nx)]
    dys = [dist(yh, ynodes, j) for j in range(ny)]

    hats = {}
    one = builder.const(1.0)
    for i in range(nx):
        lxl, lxr = spacing(xnodes, i)
        for j in range(ny):
            lyl, lyr = spacing(ynodes, j)
            # diagonal pieces: g = max(mu+ - lam-, lam+ - mu-)
            lam_p = builder.lin([(1.0 / lxr, xh)], -xnodes[i] / lxr)
            lam_m = builder.lin([(1.0 / lxl, xh)], -xnodes[i] / lxl)
            mu_p = builder.lin([(1.0 / lyr, yh)], -ynodes[j] / lyr)
            mu_m = builder.lin([(1.0 / lyl, yh)], -ynodes[j] / lyl)
            g = builder.vmax(builder.lin([(1.0, mu_p), (-1.0, lam_m)]),
                             builder.lin([(1.0, lam_p), (-1.0, mu_m)]))
            m = builder.vmax(builder.vmax(dxs[i], dys[j]), g)
            hats[(i, j)] = builder.relu(builder.lin([(-1.0, m)], 1.0))

    outs = []
    for grid in value_grids:
        grid = np.asarray(grid, float)
        if grid.shape != (nx, ny):
            raise ValueError(f"value grid shape {grid.shape} != ({nx}, {ny})")
        terms = [(float(grid[i, j]), hats[(i, j)]) for i in range(nx) for j in range(ny)
                 if grid[i, j] != 0.0]
        out = builder.lin(terms) if terms else builder.const(0.0)
        # hats are a partition of unity on the grid hull and sum to <= 1 off it
        outs.append(Handle(out.layer, out.coefs, out.const,
                           min(float(grid.min()), 0.0), max(float(grid.max()), 0.0)))
    return outs
