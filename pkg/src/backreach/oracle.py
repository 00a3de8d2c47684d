"""Monte-Carlo ground truth: exact rollouts, true-BP hull estimation, and the
conservativeness error metric."""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass

import numpy as np

from .dynamics import LinearSystem, NonlinearModel
from .geom import EMPTY, Hyperrectangle, contains, sample, volume
from .network import FeedforwardNetwork, evaluate


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Deterministic counter-based stream for (seed, purpose) pairs."""
    entropy = (int(seed),) + tuple(
        zlib.crc32(t.encode()) if isinstance(t, str) else int(t) & 0xFFFFFFFF
        for t in tags
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class Trajectory:
    states: np.ndarray   # (steps+1, n_x)
    inputs: np.ndarray   # (steps, n_u)


def _step(system, net: FeedforwardNetwork, x: np.ndarray):
    u = evaluate(net, x)
    return system.step(x, u), u


def simulate(system, net: FeedforwardNetwork, x0, steps: int) -> Trajectory:
    """Exact closed-loop rollout; nonlinear models clip states to X each step."""
    x = np.asarray(x0, dtype=float)
    states = [x]
    inputs = []
    for _ in range(steps):
        x, u = _step(system, net, x)
        states.append(x)
        inputs.append(u)
    return Trajectory(np.array(states), np.array(inputs))


def rollout_batch(system, net: FeedforwardNetwork, x0: np.ndarray, steps: int,
                  chunk: int = 20000) -> np.ndarray:
    """States of shape (steps+1, n, n_x) for a batch of initial states."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    out = np.empty((steps + 1, n, x0.shape[1]))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        x = x0[sl]
        out[0, sl] = x
        for s in range(steps):
            x, _ = _step(system, net, x)
            out[s + 1, sl] = x
    return out


def reaching_mask(states: np.ndarray, target: Hyperrectangle, step: int,
                  X: Hyperrectangle | None = None) -> np.ndarray:
    """Samples whose trajectory is in the target at ``step`` (in-X path up to it)."""
    xt = states[step]
    mask = np.all(xt >= target.lo, axis=1) & np.all(xt <= target.hi, axis=1)
    if X is not None:
        for s in range(step):
            xs = states[s]
            mask &= np.all(xs >= X.lo, axis=1) & np.all(xs <= X.hi, axis=1)
    return mask


def true_bp_hull(system, net, target: Hyperrectangle, t: int,
                 domain: Hyperrectangle, n: int, seed: int):
    """Tightest box over sampled states that reach the target at step |t|.

    Under-approximates the true BP hull by construction.  Returns
    (hull, reaching_samples).
    """
    if n < 1:
        raise ValueError("need at least one sample")
    steps = abs(int(t))
    rng = rng_for(seed, "hull", steps)
    x0 = sample(domain, n, rng)
    states = rollout_batch(system, net, x0, steps)
    X = getattr(system, "X", None) if isinstance(system, LinearSystem) else None
    mask = reaching_mask(states, target, steps, X)
    pts = x0[mask]
    if pts.shape[0] == 0:
        return EMPTY, pts
    return Hyperrectangle(pts.min(axis=0), pts.max(axis=0)), pts


def approx_error(estimate, hull) -> float:
    """(area(estimate) - area(hull)) / area(hull), the conservativeness metric."""
    if hull is EMPTY:
        raise ValueError("error metric undefined for an empty hull")
    a_true = volume(hull)
    if a_true <= 0.0:
        raise ValueError("error metric undefined for a zero-volume hull")
    return (volume(estimate) - a_true) / a_true


def export_samples_csv(path, samples: np.ndarray, t: int | None = None) -> None:
    """Write reaching samples for external plotting."""
    samples = np.atleast_2d(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{i}" for i in range(samples.shape[1])]
        if t is not None:
            header = ["t"] + header
        w.writerow(header)
        for row in samples:
            out = row.tolist()
            if t is not None:
                out = [t] + out
            w.writerow(out)
