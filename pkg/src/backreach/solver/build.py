"""Incremental LP/MIP construction helper.

Rows are collected sparsely and assembled into dense arrays once.  All
encodings in the toolkit (ReLU big-M, piecewise-linear sandwiches, chained
dynamics) are written against this builder so variable indices can be shared
across blocks.
"""

from __future__ import annotations

import numpy as np

from .lp import LinearProgram
from .milp import MixedIntegerProgram


class ModelBuilder:
    def __init__(self):
        self.lb = []
        self.ub = []
        self.names = []
        self._le_rows = []   # (indices, coefs, rhs)
        self._eq_rows = []
        self.binaries = set()

    @property
    def n(self) -> int:
        return len(self.lb)

    def new_var(self, lo=-np.inf, hi=np.inf, name="") -> int:
        if lo > hi:
            raise ValueError(f"variable {name!r} with lo {lo} > hi {hi}")
        self.lb.append(float(lo))
        self.ub.append(float(hi))
        self.names.append(name)
        return self.n - 1

    def new_vars(self, k, lo, hi, name="") -> list:
        lo = np.broadcast_to(np.asarray(lo, float), (k,))
        hi = np.broadcast_to(np.asarray(hi, float), (k,))
        return [self.new_var(lo[i], hi[i], f"{name}[{i}]") for i in range(k)]

    def new_binary(self, name="") -> int:
        j = self.new_var(0.0, 1.0, name)
        self.binaries.add(j)
        return j

    def tighten(self, j, lo=None, hi=None):
        if lo is not None:
            self.lb[j] = max(self.lb[j], float(lo))
        if hi is not None:
            self.ub[j] = min(self.ub[j], float(hi))
        if self.lb[j] > self.ub[j]:
            raise ValueError(f"tightening emptied variable {self.names[j]!r}")

    def add_le(self, coefs: dict, rhs: float):
        """sum coefs[j] * x_j <= rhs"""
        idx = np.fromiter(coefs.keys(), dtype=int)
        val = np.fromiter(coefs.values(), dtype=float)
        self._le_rows.append((idx, val, float(rhs)))

    def add_ge(self, coefs: dict, rhs: float):
        self.add_le({j: -v for j, v in coefs.items()}, -rhs)

    def add_eq(self, coefs: dict, rhs: float):
        idx = np.fromiter(coefs.keys(), dtype=int)
        val = np.fromiter(coefs.values(), dtype=float)
        self._eq_rows.append((idx, val, float(rhs)))

    def interval(self, j) -> tuple:
        return self.lb[j], self.ub[j]

    def affine_interval(self, coefs: dict, const=0.0) -> tuple:
        lo = hi = const
        for j, v in coefs.items():
            a, b = (v * self.lb[j], v * self.ub[j]) if v >= 0 else (v * self.ub[j], v * self.lb[j])
            lo += a
            hi += b
        return lo, hi

    def _rows_to_dense(self, rows):
        A = np.zeros((len(rows), self.n))
        b = np.zeros(len(rows))
        for i, (idx, val, rhs) in enumerate(rows):
            A[i, idx] = val
            b[i] = rhs
        return A, b

    def build_lp(self, c: dict | np.ndarray, sense="min") -> LinearProgram:
        cv = np.zeros(self.n)
        if isinstance(c, dict):
            for j, v in c.items():
                cv[j] = v
        else:
            cv[: len(c)] = c
        A_ub, b_ub = self._rows_to_dense(self._le_rows)
        A_eq, b_eq = self._rows_to_dense(self._eq_rows)
        return LinearProgram(
            c=cv, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
            lb=np.array(self.lb), ub=np.array(self.ub), sense=sense,
        )

    def build_mip(self, c, sense="min") -> MixedIntegerProgram:
        return MixedIntegerProgram(self.build_lp(c, sense), frozenset(self.binaries))

    def encode_relu(self, z_coefs: dict, z_const: float, zl: float, zu: float, name="relu") -> int:
        """Exact y = max(0, z) for affine z with sound bounds zl <= z <= zu.

        Stable neurons need no binary; an unstable one gets the standard
        four-row big-M block with M taken from the bounds.
        """
        if zl > zu:
            raise ValueError(f"crossed relu bounds for {name!r}: [{zl}, {zu}]")
        if zl >= 0.0:  # stable active: y = z
            y = self.new_var(zl, zu, name)
            self.add_eq({y: 1.0, **{j: -v for j, v in z_coefs.items()}}, z_const)
            return y
        if zu <= 0.0:  # stable inactive: y = 0
            return self.new_var(0.0, 0.0, name)
        y = self.new_var(0.0, zu, name)
        d = self.new_binary(name + ".on")
        # y >= z
        self.add_le({**{j: v for j, v in z_coefs.items()}, y: -1.0}, -z_const)
        # y <= zu * d
        self.add_le({y: 1.0, d: -zu}, 0.0)
        # y <= z - zl (1 - d)
        self.add_le({y: 1.0, **{j: -v for j, v in z_coefs.items()}, d: -zl}, z_const - zl)
        return y
