import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backreach.geom import (
    EMPTY,
    HalfspacePolytope,
    Hyperrectangle,
    TimedSetSequence,
    bounding_box,
    contains,
    intersect,
    intersects,
    subset,
    volume,
)


def box(lo, hi):
    return Hyperrectangle(lo, hi)


UNIT2 = box([0, 0], [1, 1])


class TestContains:
    def test_interior_point(self):
        assert contains(UNIT2, [0.5, 0.5])

    def test_boundary_is_inside(self):
        assert contains(UNIT2, [1, 1])

    def test_just_outside(self):
        assert not contains(UNIT2, [1.0000001, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            contains(UNIT2, [0.5])

    def test_empty_contains_nothing(self):
        assert not contains(EMPTY, [0.0, 0.0])


class TestSubset:
    def test_strict(self):
        assert subset(UNIT2, box([-1, -1], [2, 2]))

    def test_reflexive(self):
        assert subset(UNIT2, UNIT2, 0.0)

    def test_tolerance_absorbs_excess(self):
        assert subset(box([0, 0], [1.001, 1]), UNIT2, 1e-2)
        assert not subset(box([0, 0], [1.001, 1]), UNIT2, 1e-4)

    def test_empty_subset_of_anything(self):
        assert subset(EMPTY, UNIT2)

    def test_negative_tol_rejected(self):
        with pytest.raises(ValueError):
            subset(UNIT2, UNIT2, -1.0)


class TestIntersects:
    def test_disjoint(self):
        assert not intersects(UNIT2, box([2, 2], [3, 3]))

    def test_touching_counts(self):
        assert intersects(UNIT2, box([1, 1], [2, 2]))

    def test_overlap(self):
        assert intersects(box([0, 0], [4, 4]), box([3, 0], [5, 1]))

    def test_empty_intersects_nothing(self):
        assert not intersects(EMPTY, UNIT2)
        assert not intersects(UNIT2, EMPTY)


class TestBoundingBox:
    def test_pair(self):
        bb = bounding_box([UNIT2, box([2, 2], [3, 3])])
        assert bb == box([0, 0], [3, 3])

    def test_identity(self):
        assert bounding_box([UNIT2]) == UNIT2

    def test_mixed(self):
        bb = bounding_box([box([-1, 0], [0, 2]), box([0, -2], [1, 0])])
        assert bb == box([-1, -2], [1, 2])

    def test_idempotent(self):
        bb = bounding_box([box([-1, 0], [0, 2]), box([0, -2], [1, 0])])
        assert bounding_box([bb]) == bb

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            bounding_box([])


class TestVolume:
    def test_rectangle(self):
        assert volume(box([0, 0], [2, 3])) == 6

    def test_degenerate(self):
        assert volume(box([1, 0], [1, 5])) == 0

    def test_unit_6d(self):
        assert volume(Hyperrectangle(np.zeros(6), np.ones(6))) == 1

    def test_empty(self):
        assert volume(EMPTY) == 0.0


def finite_boxes(dim=2):
    lo = st.lists(st.floats(-50, 50), min_size=dim, max_size=dim)
    width = st.lists(st.floats(0, 20), min_size=dim, max_size=dim)
    return st.tuples(lo, width).map(
        lambda t: Hyperrectangle(np.array(t[0]), np.array(t[0]) + np.array(t[1]))
    )


@settings(max_examples=200, deadline=None)
@given(finite_boxes(), finite_boxes())
def test_subset_antisymmetry(a, b):
    if subset(a, b, 0.0) and subset(b, a, 0.0):
        assert a == b


@settings(max_examples=200, deadline=None)
@given(finite_boxes(), finite_boxes())
def test_intersects_symmetric(a, b):
    assert intersects(a, b) == intersects(b, a)


@settings(max_examples=200, deadline=None)
@given(finite_boxes(), finite_boxes())
def test_containment_transports_points(a, b):
    if subset(a, b, 0.0):
        assert contains(b, a.center)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite_boxes(), min_size=1, max_size=6))
def test_bounding_box_dominates_volume(boxes):
    bb = bounding_box(boxes)
    assert volume(bb) >= max(volume(b) for b in boxes) - 1e-12
    assert all(subset(b, bb, 1e-12) for b in boxes)


class TestConstruction:
    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError):
            box([1, 0], [0, 1])

    def test_zero_dim_rejected(self):
        with pytest.raises(ValueError):
            Hyperrectangle(np.zeros(0), np.zeros(0))

    def test_does_not_freeze_caller_arrays(self):
        lo = np.zeros(2)
        Hyperrectangle(lo, np.ones(2))
        lo[0] = 5.0  # must stay writable

    def test_intersect_disjoint_is_empty(self):
        assert intersect(UNIT2, box([5, 5], [6, 6])) is EMPTY


class TestPolytope:
    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            HalfspacePolytope(np.eye(2), np.zeros(3))

    def test_from_box_membership(self):
        poly = HalfspacePolytope.from_box(UNIT2)
        assert poly.contains([0.5, 0.5])
        assert not poly.contains([1.5, 0.5])


class TestSerialization:
    def test_box_roundtrip(self):
        b = box([-1.5, 2], [0, 3.25])
        assert Hyperrectangle.from_json(b.to_json()) == b

    def test_empty_roundtrip(self):
        assert Hyperrectangle.from_json(EMPTY.to_json()) is EMPTY

    def test_sequence_roundtrip(self):
        seq = TimedSetSequence(tau=2)
        seq.sets = {0: UNIT2, -1: box([-1, -1], [2, 2]), -2: EMPTY}
        seq.partitions[-1] = [UNIT2]
        obj = seq.to_json()
        assert obj["tau"] == 2
        assert set(obj["sets"]) == {"0", "-1", "-2"}
        back = TimedSetSequence.from_json(obj)
        assert back.sets[-1] == seq.sets[-1]
        assert back.sets[-2] is EMPTY
        assert back.partitions[-1] == [UNIT2]

    def test_contiguity_validation(self):
        seq = TimedSetSequence(tau=2)
        seq.sets = {0: UNIT2, -2: UNIT2}
        with pytest.raises(ValueError):
            seq.validate()
