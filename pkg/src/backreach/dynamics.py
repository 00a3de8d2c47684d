"""System models: linear state-space and nonlinear expression-tree dynamics.

Nonlinear dynamics are given per state coordinate as a tiny expression tree
over the vocabulary {const, var, add, mul, sin, cos, square, clip}; that is
all the benchmarks need and all the abstraction layer supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Hyperrectangle


@dataclass(frozen=True)
class LinearSystem:
    """x' = A x + B u + c with box-constrained controls U and states X."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    U: Hyperrectangle
    X: Hyperrectangle

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        B = np.atleast_2d(np.asarray(self.B, float))
        c = np.atleast_1d(np.asarray(self.c, float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or c.size != n:
            raise ValueError("inconsistent system matrix dimensions")
        if self.U.dim != B.shape[1] or self.X.dim != n:
            raise ValueError("U/X dimensions inconsistent with B/A")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        """One exact transition; accepts batched (n, d) arrays."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        return x @ self.A.T + u @ self.B.T + self.c if x.ndim == 2 else self.A @ x + self.B @ u + self.c


# --- expression trees -------------------------------------------------------

CONST, VAR, ADD, MUL, SIN, COS, SQUARE, CLIP = (
    "const", "var", "add", "mul", "sin", "cos", "square", "clip",
)


def const(v) -> tuple:
    return (CONST, float(v))


def x_var(i) -> tuple:
    return (VAR, "x", int(i))


def u_var(i) -> tuple:
    return (VAR, "u", int(i))


def add(*terms) -> tuple:
    return (ADD,) + tuple(terms)


def mul(a, b) -> tuple:
    return (MUL, a, b)


def sin(a) -> tuple:
    return (SIN, a)


def cos(a) -> tuple:
    return (COS, a)


def square(a) -> tuple:
    return (SQUARE, a)


def clip_expr(a, lo, hi) -> tuple:
    return (CLIP, a, float(lo), float(hi))


def eval_expr(expr, x, u):
    """Vectorized evaluation; x and u have shape (..., n)."""
    op = expr[0]
    if op == CONST:
        return expr[1]
    if op == VAR:
        src = x if expr[1] == "x" else u
        return src[..., expr[2]]
    if op == ADD:
        return sum(eval_expr(e, x, u) for e in expr[1:])
    if op == MUL:
        return eval_expr(expr[1], x, u) * eval_expr(expr[2], x, u)
    if op == SIN:
        return np.sin(eval_expr(expr[1], x, u))
    if op == COS:
        return np.cos(eval_expr(expr[1], x, u))
    if op == SQUARE:
        return np.square(eval_expr(expr[1], x, u))
    if op == CLIP:
        return np.clip(eval_expr(expr[1], x, u), expr[2], expr[3])
    raise ValueError(f"unsupported expression op {op!r}")


def expr_vars(expr, out=None) -> set:
    out = set() if out is None else out
    op = expr[0]
    if op == VAR:
        out.add((expr[1], expr[2]))
    elif op in (ADD,):
        for e in expr[1:]:
            expr_vars(e, out)
    elif op == MUL:
        expr_vars(expr[1], out)
        expr_vars(expr[2], out)
    elif op in (SIN, COS, SQUARE, CLIP):
        expr_vars(expr[1], out)
    return out


def expr_to_json(expr):
    op = expr[0]
    if op == CONST:
        return ["const", expr[1]]
    if op == VAR:
        return ["var", expr[1], expr[2]]
    if op == ADD:
        return ["add"] + [expr_to_json(e) for e in expr[1:]]
    if op == MUL:
        return ["mul", expr_to_json(expr[1]), expr_to_json(expr[2])]
    if op in (SIN, COS, SQUARE):
        return [op, expr_to_json(expr[1])]
    if op == CLIP:
        return ["clip", expr_to_json(expr[1]), expr[2], expr[3]]
    raise ValueError(f"unsupported op {op!r}")


def expr_from_json(obj) -> tuple:
    op = obj[0]
    if op == "const":
        return const(obj[1])
    if op == "var":
        if obj[1] not in ("x", "u"):
            raise ValueError(f"unknown variable family {obj[1]!r}")
        return (VAR, obj[1], int(obj[2]))
    if op == "add":
        return (ADD,) + tuple(expr_from_json(e) for e in obj[1:])
    if op == "mul":
        return mul(expr_from_json(obj[1]), expr_from_json(obj[2]))
    if op in ("sin", "cos", "square"):
        return (op, expr_from_json(obj[1]))
    if op == "clip":
        return clip_expr(expr_from_json(obj[1]), obj[2], obj[3])
    raise ValueError(f"unsupported expression op {op!r}")


@dataclass(frozen=True)
class NonlinearModel:
    """x'_k = clip(expr_k(x, u), X) per coordinate (clipping optional)."""

    name: str
    exprs: tuple
    U: Hyperrectangle
    X: Hyperrectangle
    clip_to_x: bool = True

    def __post_init__(self):
        object.__setattr__(self, "exprs", tuple(self.exprs))
        n_x, n_u = self.X.dim, self.U.dim
        if len(self.exprs) != n_x:
            raise ValueError("one expression per state coordinate required")
        for k, e in enumerate(self.exprs):
            for fam, idx in expr_vars(e):
                dim = n_x if fam == "x" else n_u
                if idx >= dim:
                    raise ValueError(f"expression {k} references undeclared {fam}[{idx}]")

    @property
    def n_x(self) -> int:
        return self.X.dim

    @property
    def n_u(self) -> int:
        return self.U.dim

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        cols = [np.broadcast_to(eval_expr(e, x, u), x[..., 0].shape) for e in self.exprs]
        out = np.stack(cols, axis=-1)
        if self.clip_to_x:
            out = np.clip(out, self.X.lo, self.X.hi)
        return out

    @property
    def is_affine(self) -> bool:
        return all(_expr_affine(e) for e in self.exprs)


def _expr_affine(expr) -> bool:
    op = expr[0]
    if op in (CONST, VAR):
        return True
    if op == ADD:
        return all(_expr_affine(e) for e in expr[1:])
    if op == MUL:
        return (expr[1][0] == CONST and _expr_affine(expr[2])) or (
            expr[2][0] == CONST and _expr_affine(expr[1])
        )
    return False


def linear_to_model(sys: LinearSystem, name="linear") -> NonlinearModel:
    """Route a linear system through the nonlinear machinery (no clipping)."""
    exprs = []
    for k in range(sys.n_x):
        terms = []
        for i in range(sys.n_x):
            if sys.A[k, i] != 0.0:
                terms.append(mul(const(sys.A[k, i]), x_var(i)))
        for i in range(sys.n_u):
            if sys.B[k, i] != 0.0:
                terms.append(mul(const(sys.B[k, i]), u_var(i)))
        if sys.c[k] != 0.0 or not terms:
            terms.append(const(sys.c[k]))
        exprs.append(add(*terms) if len(terms) > 1 else terms[0])
    return NonlinearModel(name, tuple(exprs), sys.U, sys.X, clip_to_x=False)
