"""Axis-aligned boxes, halfspace polytopes, and timed set sequences.

Every set the pipeline computes is a closed hyperrectangle; the empty set is
an explicit singleton (``EMPTY``) rather than a box with crossed bounds.
Touching boxes count as intersecting: for safety certification a touching
backprojection/initial-set pair must be reported as a possible collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptySet:
    """Singleton marker for the empty set.

    Produced when a set-bound optimization is infeasible.  All geometry
    operations accept it: it is a subset of everything, intersects nothing,
    contains nothing, and has volume zero.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EMPTY"

    @property
    def is_empty(self):
        return True

    def to_json(self):
        return {"empty": True}


EMPTY = EmptySet()


@dataclass(frozen=True)
class Hyperrectangle:
    """Closed axis-aligned box {x : lo <= x <= hi}."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.array(self.lo, dtype=float, copy=True))
        hi = np.atleast_1d(np.array(self.hi, dtype=float, copy=True))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.ndim != 1 or hi.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lo and hi must be 1-D vectors of equal length")
        if lo.size == 0:
            raise ValueError("boxes must have dimension > 0")
        if np.any(lo > hi):
            raise ValueError(
                f"crossed bounds lo={lo} hi={hi}; use EMPTY for the empty set"
            )
        lo.setflags(write=False)
        hi.setflags(write=False)

    @staticmethod
    def from_center(center, radius) -> "Hyperrectangle":
        center = np.asarray(center, dtype=float)
        radius = np.asarray(radius, dtype=float)
        if np.any(radius < 0):
            raise ValueError("radii must be nonnegative")
        return Hyperrectangle(center - radius, center + radius)

    @property
    def is_empty(self):
        return False

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def __eq__(self, other):
        if not isinstance(other, Hyperrectangle):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def to_json(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @staticmethod
    def from_json(obj) -> "Hyperrectangle | EmptySet":
        if obj.get("empty"):
            return EMPTY
        return Hyperrectangle(np.asarray(obj["lo"], float), np.asarray(obj["hi"], float))


Boxlike = "Hyperrectangle | EmptySet"


def _check_dims(a: Hyperrectangle, b) -> None:
    if a.dim != (b.dim if isinstance(b, Hyperrectangle) else len(b)):
        raise ValueError(f"dimension mismatch: {a.dim} vs other")


def contains(box, x) -> bool:
    """Closed-box membership test; boundary points are inside."""
    if box is EMPTY:
        return False
    x = np.asarray(x, dtype=float)
    _check_dims(box, x)
    return bool(np.all(box.lo <= x) and np.all(x <= box.hi))


def subset(a, b, tol: float = 0.0) -> bool:
    """True iff ``a`` is contained in ``b`` inflated by ``tol`` per face."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if a is EMPTY:
        return True
    if b is EMPTY:
        return False
    _check_dims(a, b)
    return bool(np.all(b.lo - tol <= a.lo) and np.all(a.hi <= b.hi + tol))


def intersects(a, b) -> bool:
    """True iff the closed boxes share at least one point (touching counts)."""
    if a is EMPTY or b is EMPTY:
        return False
    _check_dims(a, b)
    return bool(np.all(np.maximum(a.lo, b.lo) <= np.minimum(a.hi, b.hi)))


def intersect(a, b):
    """Intersection of two boxes (EMPTY when disjoint)."""
    if a is EMPTY or b is EMPTY:
        return EMPTY
    _check_dims(a, b)
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(lo > hi):
        return EMPTY
    return Hyperrectangle(lo, hi)


def bounding_box(boxes) -> Hyperrectangle:
    """Tightest box containing every box in ``boxes`` (EMPTY entries dropped)."""
    boxes = [b for b in boxes if b is not EMPTY]
    if not boxes:
        raise ValueError("bounding_box of an empty collection")
    lo = np.min([b.lo for b in boxes], axis=0)
    hi = np.max([b.hi for b in boxes], axis=0)
    return Hyperrectangle(lo, hi)


def volume(box) -> float:
    if box is EMPTY:
        return 0.0
    return float(np.prod(box.hi - box.lo))


def sample(box: Hyperrectangle, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples over the box, shape (n, dim)."""
    u = rng.random((n, box.dim))
    return box.lo + u * (box.hi - box.lo)


@dataclass(frozen=True)
class HalfspacePolytope:
    """Convex polytope {x : A x <= b}; carrier for general target/input sets."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if A.shape[0] != b.size:
            raise ValueError("row count of A must equal length of b")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @staticmethod
    def from_box(box: Hyperrectangle) -> "HalfspacePolytope":
        eye = np.eye(box.dim)
        return HalfspacePolytope(
            np.vstack([eye, -eye]), np.concatenate([box.hi, -box.lo])
        )

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.A @ x <= self.b + tol))


def as_polytope(s) -> HalfspacePolytope:
    if isinstance(s, HalfspacePolytope):
        return s
    if isinstance(s, Hyperrectangle):
        return HalfspacePolytope.from_box(s)
    raise TypeError(f"cannot interpret {type(s).__name__} as a polytope")


@dataclass
class TimedSetSequence:
    """Backprojection over-approximations P(t) for t in {-tau, ..., 0}.

    ``sets[0]`` is always the target set.  ``omega`` holds the per-step affine
    control bounds recomputed over each step's bounding rectangle;
    ``partitions`` the elements used per step.  ``flags`` records per-step
    solver caveats (e.g. faces widened to a relaxation bound under a node
    budget).
    """

    tau: int
    sets: dict = field(default_factory=dict)
    omega: dict = field(default_factory=dict)
    partitions: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    invariance: bool = False
    invariance_step: int | None = None

    def validate(self):
        expected = set(range(-self.tau, 1))
        if set(self.sets.keys()) != expected:
            raise ValueError(f"set keys {sorted(self.sets)} != contiguous {sorted(expected)}")
        return self

    def timesteps(self):
        return range(-self.tau, 0)

    def to_json(self):
        out = {
            "tau": self.tau,
            "sets": {str(t): _set_json(s) for t, s in self.sets.items()},
            "invariance": self.invariance,
        }
        if self.invariance_step is not None:
            out["invariance_step"] = self.invariance_step
        if self.partitions:
            out["partitions"] = {
                str(t): [_set_json(e) for e in elems]
                for t, elems in self.partitions.items()
            }
        if self.flags:
            out["flags"] = {str(t): f for t, f in self.flags.items() if f}
        return out

    @staticmethod
    def from_json(obj) -> "TimedSetSequence":
        seq = TimedSetSequence(tau=int(obj["tau"]))
        seq.sets = {int(t): Hyperrectangle.from_json(s) for t, s in obj["sets"].items()}
        seq.invariance = bool(obj.get("invariance", False))
        seq.invariance_step = obj.get("invariance_step")
        for t, elems in obj.get("partitions", {}).items():
            seq.partitions[int(t)] = [Hyperrectangle.from_json(e) for e in elems]
        for t, f in obj.get("flags", {}).items():
            seq.flags[int(t)] = f
        return seq


def _set_json(s):
    return s.to_json()
