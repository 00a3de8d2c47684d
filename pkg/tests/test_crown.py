import numpy as np
import pytest

from backreach.crown import relax
from backreach.geom import Hyperrectangle, sample
from backreach.network import FeedforwardNetwork, Layer, evaluate

from .test_network import random_net


class TestAffineExact:
    def test_pure_affine_net(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(2, 3))
        b = rng.normal(size=2)
        net = FeedforwardNetwork((Layer(W, b, "id"),))
        bounds = relax(net, Hyperrectangle([-1, -1, -1], [1, 1, 1]))
        assert np.allclose(bounds.Psi, W) and np.allclose(bounds.Phi, W)
        assert np.allclose(bounds.alpha, b) and np.allclose(bounds.beta, b)


class TestSingleRelu:
    def setup_method(self):
        self.net = FeedforwardNetwork(
            (Layer([[1.0]], [0.0], "relu"), Layer([[1.0]], [0.0], "id"))
        )

    def test_triangle_upper_on_symmetric_box(self):
        bounds = relax(self.net, Hyperrectangle([-1.0], [1.0]))
        # triangle upper line for relu over [-1, 1] is 0.5 x + 0.5
        assert np.isclose(bounds.Psi[0, 0], 0.5)
        assert np.isclose(bounds.alpha[0], 0.5)
        xs = np.linspace(-1, 1, 1001)
        up = bounds.Psi[0, 0] * xs + bounds.alpha[0]
        lo = bounds.Phi[0, 0] * xs + bounds.beta[0]
        relu = np.maximum(xs, 0)
        assert np.all(up >= relu - 1e-12)
        assert np.all(lo <= relu + 1e-12)

    def test_adaptive_lower_slope_tie_takes_one(self):
        bounds = relax(self.net, Hyperrectangle([-1.0], [1.0]))
        assert bounds.Phi[0, 0] == 1.0  # u == |l| tie -> slope 1

    def test_adaptive_lower_slope_small_u(self):
        bounds = relax(self.net, Hyperrectangle([-2.0], [1.0]))
        assert bounds.Phi[0, 0] == 0.0

    def test_stable_neurons_exact(self):
        active = relax(self.net, Hyperrectangle([0.5], [2.0]))
        assert active.Psi[0, 0] == 1.0 and active.Phi[0, 0] == 1.0
        inactive = relax(self.net, Hyperrectangle([-2.0], [-0.5]))
        assert inactive.Psi[0, 0] == 0.0 and inactive.Phi[0, 0] == 0.0


class TestSoundness:
    @pytest.mark.parametrize("seed", range(8))
    def test_sampled_soundness(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net([2, 5, 5, 2], rng)
        c = rng.normal(size=2)
        dom = Hyperrectangle(c - rng.uniform(0.2, 2.0, 2), c + rng.uniform(0.2, 2.0, 2))
        bounds = relax(net, dom)
        xs = sample(dom, 20_000, rng)
        out = evaluate(net, xs)
        up = bounds.upper(xs)
        lo = bounds.lower(xs)
        assert np.min(up - out) >= -1e-9
        assert np.min(out - lo) >= -1e-9

    def test_point_domain_tight(self):
        rng = np.random.default_rng(42)
        net = random_net([3, 6, 6, 2], rng)
        x = rng.normal(size=3)
        bounds = relax(net, Hyperrectangle(x, x))
        y = evaluate(net, x)
        assert np.all(np.abs(bounds.upper(x) - y) < 1e-9)
        assert np.all(np.abs(bounds.lower(x) - y) < 1e-9)

    def test_output_box_contains_samples(self):
        rng = np.random.default_rng(7)
        net = random_net([2, 5, 1], rng)
        dom = Hyperrectangle([-1, -1], [1, 1])
        ob = relax(net, dom).output_box()
        out = evaluate(net, sample(dom, 5000, rng))
        assert np.all(out >= ob.lo - 1e-9) and np.all(out <= ob.hi + 1e-9)


class TestShrinkingDomains:
    def test_center_gap_never_loosens(self):
        rng = np.random.default_rng(11)
        worst = -np.inf
        for _ in range(100):
            net = random_net([2, 5, 5, 1], rng)
            c = rng.normal(size=2)
            r = rng.uniform(0.3, 2.0, 2)
            parent = Hyperrectangle(c - r, c + r)
            f = rng.uniform(0.2, 0.9)
            off = rng.uniform(-1 + f, 1 - f, 2) * r
            child = Hyperrectangle(c + off - f * r, c + off + f * r)
            bp = relax(net, parent)
            bc = relax(net, child)
            cc = child.center
            gap_parent = float(bp.upper(cc)[0] - bp.lower(cc)[0])
            gap_child = float(bc.upper(cc)[0] - bc.lower(cc)[0])
            worst = max(worst, gap_child - gap_parent)
        assert worst <= 1e-9, f"shrinking loosened the center gap by {worst}"

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(1)
        net = random_net([2, 3, 1], rng)
        with pytest.raises(ValueError):
            relax(net, Hyperrectangle([0.0], [1.0]))
