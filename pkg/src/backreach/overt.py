"""Sound piecewise-linear over-approximation of nonlinear dynamics.

Scalar nonlinearities (sin, cos, square) get sandwich bounds built from
chords and tangents: the interval is split at inflection points, each piece
is uniformly refined until the bound gap is within epsilon.  On concave
pieces the upper bound is the tangent at each segment midpoint and the lower
bound the segment chord; convex pieces swap the roles.  The gap between two
lines is affine per segment, so the epsilon check on segment endpoints is
exact, not sampled.

Products decompose through the square identity a*b = ((a+b)^2 - (a-b)^2)/4.
The resulting relational abstraction is sound: every true transition of the
dynamics admits a feasible witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ADD, CLIP, CONST, COS, MUL, NonlinearModel, SIN, SQUARE, VAR
from .geom import Hyperrectangle

UPPER = "upper"
LOWER = "lower"


@dataclass(frozen=True)
class Line:
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * np.asarray(x, float) + self.intercept


@dataclass
class PiecewiseLinearBound:
    """One-sided bound on a scalar function over [breakpoints[0], breakpoints[-1]].

    Upper bounds take the pointwise min of each segment's lines, lower bounds
    the pointwise max.
    """

    kind: str
    breakpoints: np.ndarray
    segments: list  # list of list[Line], one list per breakpoint gap

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, float)
        if self.kind not in (UPPER, LOWER):
            raise ValueError(f"bad bound kind {self.kind!r}")
        if len(self.segments) != self.breakpoints.size - 1:
            raise ValueError("segment count != breakpoint gaps")
        if np.any(np.diff(self.breakpoints) < 0):
            raise ValueError("breakpoints must be nondecreasing")

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def __call__(self, x):
        x = np.asarray(x, float)
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.n_segments - 1)
        out = np.empty(x.shape)
        for s, lines in enumerate(self.segments):
            mask = idx == s
            if not mask.any():
                continue
            vals = np.stack([ln(x[mask]) for ln in lines], axis=0)
            out[mask] = vals.min(axis=0) if self.kind == UPPER else vals.max(axis=0)
        return out

    def range(self) -> tuple:
        """Sound bounds on the bound itself over its domain (line endpoints)."""
        vals = []
        for s, lines in enumerate(self.segments):
            a, b = self.breakpoints[s], self.breakpoints[s + 1]
            ends = [ln(np.array([a, b])) for ln in lines]
            pick = np.min(ends, axis=0) if self.kind == UPPER else np.max(ends, axis=0)
            vals.extend(pick.tolist())
        return min(vals), max(vals)


class EpsilonUnattainable(ValueError):
    pass


_FNS = {
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda x: -np.sin(x)),
    "square": (np.square, lambda x: 2.0 * np.asarray(x)),
}


def _inflections(fn: str, a: float, b: float) -> list:
    """Interior inflection points, splitting the interval into convexity pieces."""
    if fn == "square":
        return []
    # sin'' = -sin: roots k*pi;  cos'' = -cos: roots pi/2 + k*pi
    offset = 0.0 if fn == "sin" else math.pi / 2.0
    k0 = math.ceil((a - offset) / math.pi)
    pts = []
    k = k0
    while offset + k * math.pi < b:
        p = offset + k * math.pi
        if a < p < b:
            pts.append(p)
        k += 1
    return pts


def _is_concave(fn: str, mid: float) -> bool:
    if fn == "square":
        return False
    if fn == "sin":
        return math.sin(mid) > 0
    return math.cos(mid) > 0


def fn_range(fn: str, a: float, b: float) -> tuple:
    """Exact range of the scalar function over [a, b]."""
    f = _FNS[fn][0]
    cand = [float(f(a)), float(f(b))]
    if fn == "square":
        if a <= 0.0 <= b:
            cand.append(0.0)
    else:
        # critical points of sin at pi/2 + k*pi; of cos at k*pi
        offset = math.pi / 2.0 if fn == "sin" else 0.0
        k = math.ceil((a - offset) / math.pi)
        while offset + k * math.pi <= b:
            cand.append(float(f(offset + k * math.pi)))
            k += 1
    return min(cand), max(cand)


def _tangent(f, df, at: float) -> Line:
    s = float(df(at))
    return Line(s, float(f(at)) - s * at)


def _chord(f, t0: float, t1: float) -> Line:
    if t1 - t0 < 1e-14:
        return Line(0.0, float(f(t0)))
    s = (float(f(t1)) - float(f(t0))) / (t1 - t0)
    return Line(s, float(f(t0)) - s * t0)


def bound_scalar(fn: str, interval, epsilon: float, max_segments: int = 4096):
    """Sound epsilon-tight sandwich (lower, upper) for fn over the interval.

    The measured gap max(upper - lower) over the interval is at most epsilon;
    it is evaluated exactly on segment endpoints since per-segment bounds are
    single lines.
    """
    if fn not in _FNS:
        raise ValueError(f"unsupported scalar function {fn!r}")
    a, b = float(interval[0]), float(interval[1])
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    f, df = _FNS[fn]

    if b - a < 1e-14:
        v = float(f(a))
        seg = [Line(0.0, v)]
        bp = np.array([a, b])
        return (
            PiecewiseLinearBound(LOWER, bp, [seg]),
            PiecewiseLinearBound(UPPER, bp, [seg]),
        )

    pieces = []
    cut = [a] + _inflections(fn, a, b) + [b]
    for p0, p1 in zip(cut, cut[1:]):
        pieces.append((p0, p1, _is_concave(fn, 0.5 * (p0 + p1))))

    breakpoints = [a]
    lower_segs, upper_segs = [], []
    for p0, p1, concave in pieces:
        n = 1
        while True:
            bps = np.linspace(p0, p1, n + 1)
            lo_s, up_s, ok = [], [], True
            for t0, t1 in zip(bps, bps[1:]):
                mid = 0.5 * (t0 + t1)
                tangent, chord = _tangent(f, df, mid), _chord(f, t0, t1)
                up = tangent if concave else chord
                lo = chord if concave else tangent
                gap0 = up(t0) - lo(t0)
                gap1 = up(t1) - lo(t1)
                if max(gap0, gap1) > epsilon:
                    ok = False
                    break
                up_s.append([up])
                lo_s.append([lo])
            if ok:
                break
            n *= 2
            if n > max_segments:
                raise EpsilonUnattainable(
                    f"{fn} on [{p0:.6g},{p1:.6g}]: epsilon={epsilon} needs more than "
                    f"{max_segments} segments"
                )
        breakpoints.extend(bps[1:].tolist())
        lower_segs.extend(lo_s)
        upper_segs.extend(up_s)

    bp = np.asarray(breakpoints)
    return (
        PiecewiseLinearBound(LOWER, bp, lower_segs),
        PiecewiseLinearBound(UPPER, bp, upper_segs),
    )


# --- relational abstraction --------------------------------------------------

S_STATE, S_INPUT, S_INTERMEDIATE, S_SUCCESSOR = "state", "input", "inter", "succ"


@dataclass
class AbsVar:
    name: str
    lo: float
    hi: float
    role: str
    # definition used to compute soundness witnesses:
    # ("given",), ("affine", coefs, const), ("fn", fnname, src),
    # ("clip", src, lo, hi)
    definition: tuple = ("given",)


@dataclass
class AbstractDynamics:
    """Relational over-approximation of one dynamics step.

    Feasible set over (state, input, successor) contains every true
    transition with the state in the build domain and the input in U.
    """

    n_x: int
    n_u: int
    variables: list = field(default_factory=list)
    affine_eqs: list = field(default_factory=list)   # (coefs dict, rhs): sum c_i v_i = rhs
    sandwiches: list = field(default_factory=list)   # (y, x, lower_pwl, upper_pwl)
    clips: list = field(default_factory=list)        # (succ, src, lo, hi)
    state_vars: list = field(default_factory=list)
    input_vars: list = field(default_factory=list)
    succ_vars: list = field(default_factory=list)
    epsilon: float = 0.0

    def new_var(self, name, lo, hi, role, definition=("given",)) -> int:
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"unbounded abstraction variable {name!r}")
        self.variables.append(AbsVar(name, float(lo), float(hi), role, definition))
        return len(self.variables) - 1

    # -- witness machinery (used by the soundness oracles) --

    def witness(self, x, u) -> np.ndarray:
        """Concrete values for all variables along a true transition."""
        vals = np.zeros(len(self.variables))
        for i, sv in enumerate(self.state_vars):
            vals[sv] = x[i]
        for i, iv in enumerate(self.input_vars):
            vals[iv] = u[i]
        for j, v in enumerate(self.variables):
            kind = v.definition[0]
            if kind == "given":
                continue
            if kind == "affine":
                _, coefs, cst = v.definition
                vals[j] = sum(c * vals[k] for k, c in coefs.items()) + cst
            elif kind == "fn":
                _, fname, src = v.definition
                vals[j] = float(_FNS[fname][0](vals[src]))
            elif kind == "clip":
                _, src, lo, hi = v.definition
                vals[j] = min(max(vals[src], lo), hi)
            else:
                raise ValueError(f"bad definition {v.definition}")
        return vals

    def witness_residual(self, x, u) -> float:
        """Worst violation of the abstraction by the true-transition witness."""
        vals = self.witness(x, u)
        worst = 0.0
        for v, value in zip(self.variables, vals):
            worst = max(worst, v.lo - value, value - v.hi)
        for coefs, rhs in self.affine_eqs:
            worst = max(worst, abs(sum(c * vals[k] for k, c in coefs.items()) - rhs))
        for y, xv, lo_pwl, up_pwl in self.sandwiches:
            worst = max(worst, float(lo_pwl(vals[xv]) - vals[y]))
            worst = max(worst, float(vals[y] - up_pwl(vals[xv])))
        for succ, src, lo, hi in self.clips:
            worst = max(worst, abs(vals[succ] - min(max(vals[src], lo), hi)))
        return worst


class _Compiler:
    def __init__(self, abs_dyn: AbstractDynamics, epsilon: float):
        self.a = abs_dyn
        self.epsilon = epsilon
        self.counter = 0

    def fresh(self, tag):
        self.counter += 1
        return f"{tag}{self.counter}"

    def interval_of(self, coefs, cst) -> tuple:
        lo = hi = cst
        for j, c in coefs.items():
            v = self.a.variables[j]
            lo += c * (v.lo if c >= 0 else v.hi)
            hi += c * (v.hi if c >= 0 else v.lo)
        return lo, hi

    def materialize(self, form) -> int:
        """Variable holding the affine form (reused when it is a bare var)."""
        coefs, cst = form
        if len(coefs) == 1 and cst == 0.0:
            (j, c), = coefs.items()
            if c == 1.0:
                return j
        lo, hi = self.interval_of(coefs, cst)
        j = self.a.new_var(self.fresh("t"), lo, hi, S_INTERMEDIATE, ("affine", dict(coefs), cst))
        self.a.affine_eqs.append(({**{k: -c for k, c in coefs.items()}, j: 1.0}, cst))
        return j

    def compile(self, expr) -> tuple:
        """Returns an affine form (coefs, const) over abstraction variables."""
        op = expr[0]
        if op == CONST:
            return ({}, expr[1])
        if op == VAR:
            fam, idx = expr[1], expr[2]
            j = self.a.state_vars[idx] if fam == "x" else self.a.input_vars[idx]
            return ({j: 1.0}, 0.0)
        if op == ADD:
            coefs, cst = {}, 0.0
            for e in expr[1:]:
                c2, k2 = self.compile(e)
                for j, c in c2.items():
                    coefs[j] = coefs.get(j, 0.0) + c
                cst += k2
            return (coefs, cst)
        if op == MUL:
            fa = self.compile(expr[1])
            fb = self.compile(expr[2])
            if not fa[0]:  # constant * form
                return ({j: fa[1] * c for j, c in fb[0].items()}, fa[1] * fb[1])
            if not fb[0]:
                return ({j: fb[1] * c for j, c in fa[0].items()}, fb[1] * fa[1])
            va, vb = self.materialize(fa), self.materialize(fb)
            return ({self.product(va, vb): 1.0}, 0.0)
        if op in (SIN, COS, SQUARE):
            src = self.materialize(self.compile(expr[1]))
            return ({self.scalar_fn(op, src): 1.0}, 0.0)
        if op == CLIP:
            src = self.materialize(self.compile(expr[1]))
            lo, hi = expr[2], expr[3]
            v = self.a.variables[src]
            y = self.a.new_var(
                self.fresh("clip"),
                min(max(v.lo, lo), hi), min(max(v.hi, lo), hi),
                S_INTERMEDIATE, ("clip", src, lo, hi),
            )
            self.a.clips.append((y, src, lo, hi))
            return ({y: 1.0}, 0.0)
        raise ValueError(f"unsupported primitive {op!r} in dynamics expression")

    def scalar_fn(self, fname: str, src: int) -> int:
        v = self.a.variables[src]
        lo_pwl, up_pwl = bound_scalar(fname, (v.lo, v.hi), self.epsilon)
        flo, fhi = fn_range(fname, v.lo, v.hi)
        y = self.a.new_var(self.fresh(fname), flo, fhi, S_INTERMEDIATE, ("fn", fname, src))
        self.a.sandwiches.append((y, src, lo_pwl, up_pwl))
        return y

    def product(self, va: int, vb: int) -> int:
        """a*b via ((a+b)^2 - (a-b)^2)/4 with sandwiched squares."""
        A, B = self.a.variables[va], self.a.variables[vb]
        sp = self.materialize(({va: 1.0, vb: 1.0}, 0.0))
        sm = self.materialize(({va: 1.0, vb: -1.0}, 0.0))
        qp = self.scalar_fn("square", sp)
        qm = self.scalar_fn("square", sm)
        cands = [A.lo * B.lo, A.lo * B.hi, A.hi * B.lo, A.hi * B.hi]
        w = self.a.new_var(
            self.fresh("prod"), min(cands), max(cands), S_INTERMEDIATE,
            ("affine", {qp: 0.25, qm: -0.25}, 0.0),
        )
        self.a.affine_eqs.append(({w: 1.0, qp: -0.25, qm: 0.25}, 0.0))
        return w


def decompose_product(abs_dyn: AbstractDynamics, va: int, vb: int, epsilon: float) -> int:
    """Register the square-based decomposition of va*vb; returns the product var."""
    for v in (va, vb):
        av = abs_dyn.variables[v]
        if not (np.isfinite(av.lo) and np.isfinite(av.hi)):
            raise ValueError(f"product factor {av.name!r} has unbounded interval")
    return _Compiler(abs_dyn, epsilon).product(va, vb)


def abstract_dynamics(
    model: NonlinearModel,
    state_domain: Hyperrectangle,
    input_domain: Hyperrectangle,
    epsilon: float,
) -> AbstractDynamics:
    """Relationally sound abstraction of one step of ``model``.

    Valid for states in ``state_domain`` (intersected with the model's
    operating region) and inputs in ``input_domain``.
    """
    if state_domain.dim != model.n_x or input_domain.dim != model.n_u:
        raise ValueError("domain dimensions inconsistent with model")
    a = AbstractDynamics(n_x=model.n_x, n_u=model.n_u, epsilon=epsilon)
    dom_lo = np.maximum(state_domain.lo, model.X.lo)
    dom_hi = np.minimum(state_domain.hi, model.X.hi)
    if np.any(dom_lo > dom_hi):
        raise ValueError("state domain does not meet the operating region")
    for k in range(model.n_x):
        a.state_vars.append(a.new_var(f"x[{k}]", dom_lo[k], dom_hi[k], S_STATE))
    for k in range(model.n_u):
        a.input_vars.append(
            a.new_var(f"u[{k}]", input_domain.lo[k], input_domain.hi[k], S_INPUT)
        )
    comp = _Compiler(a, epsilon)
    for k, expr in enumerate(model.exprs):
        form = comp.compile(expr)
        if model.clip_to_x:
            pre = comp.materialize(form)
            pv = a.variables[pre]
            lo_k, hi_k = model.X.lo[k], model.X.hi[k]
            succ = a.new_var(
                f"x'[{k}]",
                min(max(pv.lo, lo_k), hi_k), min(max(pv.hi, lo_k), hi_k),
                S_SUCCESSOR, ("clip", pre, lo_k, hi_k),
            )
            a.clips.append((succ, pre, lo_k, hi_k))
        else:
            coefs, cst = form
            lo, hi = comp.interval_of(coefs, cst)
            succ = a.new_var(f"x'[{k}]", lo, hi, S_SUCCESSOR, ("affine", dict(coefs), cst))
            a.affine_eqs.append(({**{j: -c for j, c in coefs.items()}, succ: 1.0}, cst))
        a.succ_vars.append(succ)
    return a


# --- MIP encoding ------------------------------------------------------------

def _upper_hull_lines(xs, ys):
    """Edges of the upper convex hull of the points (xs, ys), as lines.

    The hull of a piecewise-linear bound's breakpoint values is its exact
    concave envelope, so each edge is a globally valid one-sided bound.
    """
    pts = sorted(zip(xs.tolist(), ys.tolist()))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) >= (p[0] - x1) * (y2 - y1):
                hull.pop()
            else:
                break
        hull.append(p)
    lines = []
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        if x2 - x1 < 1e-14:
            continue
        s = (y2 - y1) / (x2 - x1)
        lines.append(Line(s, y1 - s * x1))
    return lines


def envelope_cuts(lower: PiecewiseLinearBound, upper: PiecewiseLinearBound):
    """Binary-free global rows: concave envelope above, convex envelope below."""
    bp = upper.breakpoints
    up_vals = np.array([max(ln(t) for ln in seg) for t, seg in _bp_values(upper)])
    lo_vals = np.array([min(ln(t) for ln in seg) for t, seg in _bp_values(lower)])
    upper_lines = _upper_hull_lines(bp, up_vals)
    lower_lines = [Line(-l.slope, -l.intercept) for l in _upper_hull_lines(bp, -lo_vals)]
    return lower_lines, upper_lines


def _bp_values(pwl: PiecewiseLinearBound):
    """(breakpoint, adjacent segment lines) pairs covering every vertex."""
    bp = pwl.breakpoints
    out = []
    for i, t in enumerate(bp):
        segs = []
        if i > 0:
            segs.extend(pwl.segments[i - 1])
        if i < len(pwl.segments):
            segs.extend(pwl.segments[i])
        out.append((t, segs))
    return out


def encode_pwl_pair(builder, x_var: int, y_var: int, lower: PiecewiseLinearBound,
                    upper: PiecewiseLinearBound, name="pwl") -> list:
    """Encode lower(x) <= y <= upper(x); returns the selector binaries used.

    Single-segment sandwiches need no binaries: their lines hold globally on
    the variable's range.  Multi-segment sandwiches get one selector binary
    per segment with big-M constants derived from the variable bounds, plus
    binary-free envelope rows that keep the LP relaxation near the convex
    hull of the sandwich.
    """
    if not np.array_equal(lower.breakpoints, upper.breakpoints):
        raise ValueError("sandwich bounds must share breakpoints")
    bp = lower.breakpoints
    a, b = bp[0], bp[-1]
    xlo, xhi = builder.interval(x_var)
    ylo, yhi = builder.interval(y_var)
    if xlo < a - 1e-9 or xhi > b + 1e-9:
        raise ValueError("variable range exceeds sandwich domain")

    def line_rows(lines, seg_idx, delta):
        for ln in lines[0]:
            # upper line: y <= s x + t (+ M (1 - delta))
            m_u = yhi - min(ln.slope * xlo, ln.slope * xhi) - ln.intercept
            row = {y_var: 1.0, x_var: -ln.slope}
            if delta is None:
                builder.add_le(dict(row), ln.intercept)
            else:
                row[delta] = m_u
                builder.add_le(row, ln.intercept + m_u)
        for ln in lines[1]:
            m_l = max(ln.slope * xlo, ln.slope * xhi) + ln.intercept - ylo
            row = {y_var: -1.0, x_var: ln.slope}
            if delta is None:
                builder.add_le(dict(row), -ln.intercept)
            else:
                row[delta] = m_l
                builder.add_le(row, -ln.intercept + m_l)

    if lower.n_segments == 1:
        line_rows((upper.segments[0], lower.segments[0]), 0, None)
        return []

    # binary-free envelope rows tighten the relaxation at no branching cost
    env_lo, env_up = envelope_cuts(lower, upper)
    line_rows((env_up, env_lo), 0, None)

    deltas = [builder.new_binary(f"{name}.seg{s}") for s in range(lower.n_segments)]
    builder.add_eq({d: 1.0 for d in deltas}, 1.0)
    for s, d in enumerate(deltas):
        t0, t1 = bp[s], bp[s + 1]
        # x >= t0 when delta on; slack to the full domain when off
        builder.add_le({x_var: -1.0, d: (t0 - a)}, -a)
        builder.add_le({x_var: 1.0, d: (b - t1)}, b)
        line_rows((upper.segments[s], lower.segments[s]), s, d)
    return deltas


def encode_abstraction(builder, abs_dyn: AbstractDynamics, state_vars: list,
                       input_vars: list, name="dyn"):
    """Append the abstraction's constraint block to ``builder``.

    ``state_vars``/``input_vars`` are existing builder variables; returns
    (successor_vars, var_map, binaries).
    """
    if len(state_vars) != abs_dyn.n_x or len(input_vars) != abs_dyn.n_u:
        raise ValueError("variable count mismatch")
    binaries_before = set(builder.binaries)
    var_map = {}
    for j, av in enumerate(abs_dyn.variables):
        if av.role == S_STATE:
            k = abs_dyn.state_vars.index(j)
            var_map[j] = state_vars[k]
            builder.tighten(state_vars[k], av.lo, av.hi)
        elif av.role == S_INPUT:
            k = abs_dyn.input_vars.index(j)
            var_map[j] = input_vars[k]
            builder.tighten(input_vars[k], av.lo, av.hi)
        else:
            var_map[j] = builder.new_var(av.lo, av.hi, f"{name}.{av.name}")
    for coefs, rhs in abs_dyn.affine_eqs:
        builder.add_eq({var_map[j]: c for j, c in coefs.items()}, rhs)
    for y, xv, lo_pwl, up_pwl in abs_dyn.sandwiches:
        encode_pwl_pair(builder, var_map[xv], var_map[y], lo_pwl, up_pwl,
                        name=f"{name}.{abs_dyn.variables[y].name}")
    for succ, src, lo, hi in abs_dyn.clips:
        sv, uv = var_map[src], var_map[succ]
        slo, shi = builder.interval(sv)
        # clip(z, lo, hi) = lo + relu(z - lo) - relu(relu(z - lo) - (hi - lo))
        r1 = builder.encode_relu({sv: 1.0}, -lo, slo - lo, shi - lo, f"{name}.clip.lo")
        r1lo, r1hi = builder.interval(r1)
        r2 = builder.encode_relu({r1: 1.0}, -(hi - lo), r1lo - (hi - lo), r1hi - (hi - lo),
                                 f"{name}.clip.hi")
        builder.add_eq({uv: 1.0, r1: -1.0, r2: 1.0}, lo)
    succ_vars = [var_map[j] for j in abs_dyn.succ_vars]
    binaries = sorted(builder.binaries - binaries_before)
    return succ_vars, var_map, binaries
