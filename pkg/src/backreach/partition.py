"""Uniform and guided partitioning of backreachable sets.

Guided partitioning keeps a queue of elements ordered by L1 distance to a
Monte-Carlo under-estimate Q of the true BP set, always splitting the
farthest splittable element.  Elements containing reaching samples are cut
flush against the sample hull so all samples land in one child; sample-free
elements are bisected along their longest edge.  Children that cannot
satisfy the BP constraints, or that are smaller than the minimum volume, are
terminal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import EMPTY, Hyperrectangle, intersects, sample, volume
from .network import FeedforwardNetwork
from .oracle import reaching_mask, rng_for, rollout_batch


def uniform_partition(box: Hyperrectangle, r) -> list:
    """Tile the box into prod(r) cells, r cuts per axis, shared faces."""
    r = np.atleast_1d(np.asarray(r, dtype=int))
    if r.size != box.dim:
        raise ValueError(f"partition vector length {r.size} != dimension {box.dim}")
    if np.any(r < 1):
        raise ValueError("partition counts must be >= 1")
    edges = [np.linspace(box.lo[k], box.hi[k], r[k] + 1) for k in range(box.dim)]
    cells = []
    idx = np.zeros(box.dim, dtype=int)
    total = int(np.prod(r))
    for _ in range(total):
        lo = np.array([edges[k][idx[k]] for k in range(box.dim)])
        hi = np.array([edges[k][idx[k] + 1] for k in range(box.dim)])
        cells.append(Hyperrectangle(lo, hi))
        for k in range(box.dim - 1, -1, -1):
            idx[k] += 1
            if idx[k] < r[k]:
                break
            idx[k] = 0
    return cells


def l1_distance(box: Hyperrectangle, q: Hyperrectangle) -> float:
    """L1 gap between two boxes; zero when they intersect."""
    if box.dim != q.dim:
        raise ValueError("dimension mismatch")
    gap = np.maximum(0.0, np.maximum(q.lo - box.hi, box.lo - q.hi))
    return float(gap.sum())


def estimate_bp_set(system, net: FeedforwardNetwork, target: Hyperrectangle,
                    t: int, domain: Hyperrectangle, n_samples: int, seed: int):
    """Monte-Carlo under-estimate Q of the BP set at step t.

    Samples the domain, simulates |t| steps, and bounds the reaching samples
    with a rectangle.  Returns (Q, reaching_samples); Q is EMPTY when no
    sample reaches.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    steps = abs(int(t))
    rng = rng_for(seed, "bp-estimate", steps)
    x0 = sample(domain, n_samples, rng)
    states = rollout_batch(system, net, x0, steps)
    mask = reaching_mask(states, target, steps)
    pts = x0[mask]
    if pts.shape[0] == 0:
        return EMPTY, pts
    return Hyperrectangle(pts.min(axis=0), pts.max(axis=0)), pts


@dataclass
class PartitionElement:
    box: Hyperrectangle
    value: float
    should_split: bool
    order: int  # insertion stamp; most recently split sorts last among equals


def _cut(box: Hyperrectangle, k: int, cut: float):
    hi1 = box.hi.copy()
    hi1[k] = cut
    lo2 = box.lo.copy()
    lo2[k] = cut
    return Hyperrectangle(box.lo, hi1), Hyperrectangle(lo2, box.hi)


def _split_element(box: Hyperrectangle, samples: np.ndarray):
    """One cut of the element.

    With samples inside, choose the (axis, side) flush against the sample
    hull face that maximizes the margin to the element face, so every sample
    falls in one child.  Without samples (or with zero margin everywhere)
    bisect the longest edge.  Ties pick the lowest axis, lower side first.
    """
    if samples.shape[0]:
        mask = np.all(samples >= box.lo, axis=1) & np.all(samples <= box.hi, axis=1)
        inside = samples[mask]
    else:
        inside = samples
    if inside.shape[0]:
        s_lo = inside.min(axis=0)
        s_hi = inside.max(axis=0)
        best = (-np.inf, -1, 0.0)
        for k in range(box.dim):
            # a valid flush cut must be strictly interior on both sides,
            # otherwise it produces a degenerate child and no progress
            interior = 1e-9 * max(box.widths[k], 1.0)
            for margin, cut in ((s_lo[k] - box.lo[k], s_lo[k]), (box.hi[k] - s_hi[k], s_hi[k])):
                if (margin > best[0] + 1e-12 and box.lo[k] + interior < cut < box.hi[k] - interior):
                    best = (margin, k, cut)
        margin, k, cut = best
        if margin > 1e-12:
            return _cut(box, k, cut)
    k = int(np.argmax(box.widths))
    return _cut(box, k, 0.5 * (box.lo[k] + box.hi[k]))


def guided_partition(box: Hyperrectangle, feasible, q, samples: np.ndarray,
                     r: int, v_m: float) -> list:
    """Budgeted guided refinement of ``box``; returns the element boxes.

    ``feasible(element) -> bool`` tests satisfiability of the step's BP
    constraints restricted to the element; ``q``/``samples`` come from
    ``estimate_bp_set``.  An infeasible root yields an empty list (the BP
    set at this step is empty).
    """
    if r < 1:
        raise ValueError("partition budget must be >= 1")
    if v_m <= 0:
        raise ValueError("minimum element volume must be positive")
    samples = np.asarray(samples, float)
    if samples.size == 0:
        samples = np.zeros((0, box.dim))
    samples = np.atleast_2d(samples)

    stamp = 0

    def make(b: Hyperrectangle, is_feasible=None) -> PartitionElement:
        nonlocal stamp
        ok = (feasible(b) if is_feasible is None else is_feasible) and volume(b) > v_m
        val = 0.0 if not ok else (0.0 if q is EMPTY else l1_distance(b, q))
        elem = PartitionElement(b, val, ok, stamp)
        stamp += 1
        return elem

    if not feasible(box):
        return []
    queue = [make(box, is_feasible=True)]

    # ascending value; terminal elements sort before splittable ones among
    # equal values so the popped tail is the farthest splittable element,
    # most recently split last among full ties
    def resort():
        queue.sort(key=lambda e: (e.value, e.should_split, e.order))

    while len(queue) < r and queue[-1].should_split:
        elem = queue.pop()
        b1, b2 = _split_element(elem.box, samples)
        queue.append(make(b1))
        queue.append(make(b2))
        resort()
    return [e.box for e in queue]
