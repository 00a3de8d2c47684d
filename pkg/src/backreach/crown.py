"""Affine relaxation of a ReLU network over a box domain.

Produces matrices/vectors (Psi, alpha, Phi, beta) such that

    Phi @ x + beta  <=  pi(x)  <=  Psi @ x + alpha     for all x in the domain,

via a single backward (output-to-input) pass.  Unstable neurons use the
triangle relaxation: upper line slope u/(u-l) with intercept -u*l/(u-l),
lower line slope chosen adaptively in {0, 1} (slope 1 when u >= |l|, ties
take slope 1 -- the rule is fixed so partition-level behavior is
reproducible).  Stable neurons pass through exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Hyperrectangle
from .network import RELU, FeedforwardNetwork, interval_bounds

_STABLE_EPS = 1e-12


@dataclass(frozen=True)
class AffineBounds:
    Psi: np.ndarray
    alpha: np.ndarray
    Phi: np.ndarray
    beta: np.ndarray
    domain: Hyperrectangle

    def upper(self, x) -> np.ndarray:
        return np.asarray(x, float) @ self.Psi.T + self.alpha

    def lower(self, x) -> np.ndarray:
        return np.asarray(x, float) @ self.Phi.T + self.beta

    def output_box(self) -> Hyperrectangle:
        """Constant bounds on the control over the whole domain."""
        lo, hi = self.domain.lo, self.domain.hi
        up = np.maximum(self.Psi, 0) @ hi + np.minimum(self.Psi, 0) @ lo + self.alpha
        dn = np.maximum(self.Phi, 0) @ lo + np.minimum(self.Phi, 0) @ hi + self.beta
        return Hyperrectangle(dn, up)


def _relu_relaxation(l: np.ndarray, u: np.ndarray):
    """Per-neuron line parameters (s_up, t_up, s_lo) for relu over [l, u]."""
    n = l.size
    s_up = np.zeros(n)
    t_up = np.zeros(n)
    s_lo = np.zeros(n)
    active = l >= 0.0
    inactive = ~active & (u <= 0.0)
    unstable = ~active & ~inactive
    s_up[active] = 1.0
    s_lo[active] = 1.0
    if np.any(unstable):
        lu, uu = l[unstable], u[unstable]
        span = np.maximum(uu - lu, _STABLE_EPS)
        s_up[unstable] = uu / span
        t_up[unstable] = -uu * lu / span
        s_lo[unstable] = (uu >= -lu).astype(float)
    return s_up, t_up, s_lo


def relax(net: FeedforwardNetwork, domain: Hyperrectangle) -> AffineBounds:
    """Backward-mode affine relaxation of ``net`` over ``domain``."""
    if domain.dim != net.input_dim:
        raise ValueError("domain dimension != network input dimension")
    pre = interval_bounds(net, domain)

    last = net.layers[-1]
    Lam = last.W.copy()          # upper-bound coefficients
    alpha = last.b.copy()
    Om = last.W.copy()           # lower-bound coefficients
    beta = last.b.copy()

    for m in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[m]
        if layer.activation != RELU:
            raise ValueError("hidden layers must be ReLU")
        s_up, t_up, s_lo = _relu_relaxation(pre.lower[m], pre.upper[m])

        Lp, Ln = np.maximum(Lam, 0.0), np.minimum(Lam, 0.0)
        alpha = alpha + Lp @ t_up
        Lam = Lp * s_up + Ln * s_lo

        Op, On = np.maximum(Om, 0.0), np.minimum(Om, 0.0)
        beta = beta + On @ t_up
        Om = Op * s_lo + On * s_up

        alpha = alpha + Lam @ layer.b
        beta = beta + Om @ layer.b
        Lam = Lam @ layer.W
        Om = Om @ layer.W

    return AffineBounds(Psi=Lam, alpha=alpha, Phi=Om, beta=beta, domain=domain)
