"""Static sensitivity analysis and the dynamic oracles that validate it.

Bounds are exact rationals (:class:`fractions.Fraction`) with ``math.inf`` as
the saturating unbounded value. ``0 * inf`` is taken to be ``0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Union

import networkx as nx

from .errors import MissingRange, NoPublicOutput, PerturbationOutOfRange, UnboundedInfluence
from .semantics import (
    PacingModel,
    Trace,
    TypedSpec,
    bottom_depends_on_values,
    check_specification,
    holdn,
    last_event,
    window_multiplier,
    window_times,
)
from .speclang.ast import (
    Aggregate,
    BinOp,
    Clamp,
    Cmp,
    Const,
    Default,
    Hold,
    Ite,
    Laplace,
    Offset,
    Periodic,
    Ref,
    Specification,
    TreeAggregate,
)

INF = math.inf
Number = Union[Fraction, float]

PRIVATE = "private"
POST = "post-processed"


def smul(a: Number, b: Number) -> Number:
    if a == 0 or b == 0:
        return Fraction(0)
    return a * b


@dataclass(frozen=True)
class ValueRange:
    lo: Number
    hi: Number

    @property
    def width(self) -> Number:
        return self.hi - self.lo

    @property
    def finite(self) -> bool:
        return self.lo != -INF and self.hi != INF

    def union(self, other: "ValueRange") -> "ValueRange":
        return ValueRange(min(self.lo, other.lo), max(self.hi, other.hi))

    def __contains__(self, v) -> bool:
        return self.lo <= v <= self.hi


UNBOUNDED = ValueRange(-INF, INF)


def _point(c) -> ValueRange:
    return ValueRange(Fraction(c), Fraction(c))


def const_value(e) -> Optional[Fraction]:
    """Value of a stream-free expression, ``None`` if it reads a stream."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, BinOp):
        a, b = const_value(e.left), const_value(e.right)
        if a is None or b is None:
            return None
        return {"+": a + b, "-": a - b, "*": a * b, "min": min(a, b), "max": max(a, b)}[e.op]
    if isinstance(e, Clamp):
        a = const_value(e.expr)
        return None if a is None else min(max(a, e.lo), e.hi)
    if isinstance(e, Default):
        return const_value(e.expr)
    return None


@dataclass(frozen=True)
class StreamInfo:
    range: ValueRange
    influence: Number
    bound: Number
    segment: str


@dataclass
class SensitivityReport:
    typed: TypedSpec
    streams: dict[str, StreamInfo]
    closed_windows: bool = False

    @property
    def spec(self) -> Specification:
        return self.typed.spec

    @property
    def graph(self):
        return self.typed.graph

    def bound(self, name: str) -> Number:
        return self.streams[name].bound

    @property
    def private(self) -> frozenset[str]:
        return frozenset(n for n, i in self.streams.items() if i.segment == PRIVATE)

    @property
    def post_processed(self) -> frozenset[str]:
        return frozenset(n for n, i in self.streams.items() if i.segment == POST)

    def segments(self) -> dict[str, str]:
        return {n: i.segment for n, i in self.streams.items()}

    def to_json(self) -> dict:
        return {
            "group_size": self.spec.group_size,
            "closed_windows": self.closed_windows,
            "streams": {
                n: {
                    "range": [json_number(i.range.lo), json_number(i.range.hi)],
                    "influence": json_number(i.influence),
                    "bound": json_number(i.bound),
                    "segment": i.segment,
                }
                for n, i in self.streams.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def json_number(x):
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    x = Fraction(x)
    if x.denominator == 1:
        return x.numerator
    return f"{x.numerator}/{x.denominator}"


def parse_json_number(x) -> Number:
    if x == "inf":
        return INF
    if x == "-inf":
        return -INF
    return Fraction(x)


class _Analyzer:
    """Per-expression range, influence and bound rules over one typed spec."""

    def __init__(self, typed: TypedSpec, closed_windows: bool = False):
        self.typed = typed
        self.spec = typed.spec
        self.closed = closed_windows
        full = typed.graph.to_networkx()
        self.cyclic = set()
        for comp in nx.strongly_connected_components(full):
            if len(comp) > 1 or any(full.has_edge(n, n) for n in comp):
                self.cyclic |= comp
        self._range: dict[str, ValueRange] = {}
        self._n: dict[str, Number] = {}
        self._b: dict[str, Number] = {}

    # -- helpers
    def period(self, x: str) -> Optional[Fraction]:
        p = self.typed.pacing[x]
        return p.period if isinstance(p, Periodic) else None

    def mult(self, x: str, window) -> Number:
        if window is None:
            return INF
        return Fraction(window_multiplier(window, self.period(x), self.closed))

    def input_distance(self, name: str) -> Number:
        d = self.spec.decl(name)
        if not d.bounded:
            return INF
        return self.spec.group_size * (d.hi - d.lo)

    # -- streams
    def stream_range(self, y: str) -> ValueRange:
        if y not in self._range:
            if self.spec.is_input(y):
                d = self.spec.decl(y)
                r = ValueRange(d.lo if d.lo is not None else -INF, d.hi if d.hi is not None else INF)
            elif y in self.cyclic or self.spec.output(y).is_tuple:
                r = UNBOUNDED
            else:
                r = self.range(self.spec.output(y).expr, y)
            self._range[y] = r
        return self._range[y]

    def stream_influence(self, y: str) -> Number:
        if y not in self._n:
            if self.spec.is_input(y):
                n = Fraction(1)
            elif y in self.cyclic or self.spec.output(y).is_tuple:
                n = INF
            else:
                n = self.influence(self.spec.output(y).expr, y)
            self._n[y] = n
        return self._n[y]

    def stream_bound(self, y: str) -> Number:
        if y not in self._b:
            if self.spec.is_input(y):
                b = self.input_distance(y)
            elif y in self.cyclic or self.spec.output(y).is_tuple:
                b = INF
            else:
                b = self.bound(self.spec.output(y).expr, y)
            self._b[y] = b
        return self._b[y]

    # -- expressions; ``x`` is the stream whose definition contains ``e``
    def range(self, e, x: str) -> ValueRange:
        if isinstance(e, Const):
            return _point(e.value)
        if isinstance(e, (Ref, Offset, Hold)):
            return self.stream_range(e.stream)
        if isinstance(e, (Aggregate, TreeAggregate)):
            if e.func == "count":
                return ValueRange(Fraction(0), INF)
            if e.func == "sum" or isinstance(e, TreeAggregate):
                return UNBOUNDED
            return self.stream_range(e.stream)  # avg, last
        if isinstance(e, Laplace):
            return UNBOUNDED
        if isinstance(e, Default):
            return self.range(e.expr, x).union(self.range(e.fallback, x))
        if isinstance(e, Ite):
            return self.range(e.then, x).union(self.range(e.orelse, x))
        if isinstance(e, Clamp):
            return ValueRange(e.lo, e.hi)
        if isinstance(e, BinOp):
            a, b = self.range(e.left, x), self.range(e.right, x)
            if e.op == "+":
                return ValueRange(a.lo + b.lo, a.hi + b.hi)
            if e.op == "-":
                return ValueRange(a.lo - b.hi, a.hi - b.lo)
            if e.op == "*":
                corners = [smul(p, q) for p in (a.lo, a.hi) for q in (b.lo, b.hi)]
                return ValueRange(min(corners), max(corners))
            if e.op == "min":
                return ValueRange(min(a.lo, b.lo), min(a.hi, b.hi))
            return ValueRange(max(a.lo, b.lo), max(a.hi, b.hi))
        raise TypeError(e)

    def influence(self, e, x: str) -> Number:
        if isinstance(e, (Const, Laplace)):
            return Fraction(0)
        if isinstance(e, (Ref, Offset)):
            return self.stream_influence(e.stream)
        if isinstance(e, Hold):
            factor = INF if e.bound is None else Fraction(e.bound)
            return smul(factor, self.stream_influence(e.stream))
        if isinstance(e, (Aggregate, TreeAggregate)):
            if e.func == "count":
                return Fraction(0)
            return smul(self.mult(x, e.window), self.stream_influence(e.stream))
        if isinstance(e, Default):
            return self.influence(e.expr, x) + self.influence(e.fallback, x)
        if isinstance(e, Ite):
            return self.influence(e.cond, x) + self.influence(e.then, x) + self.influence(e.orelse, x)
        if isinstance(e, (BinOp, Cmp)):
            return self.influence(e.left, x) + self.influence(e.right, x)
        if isinstance(e, Clamp):
            return self.influence(e.expr, x)
        raise TypeError(e)

    def range_rule(self, e, x: str) -> Number:
        """Bound for value-dependent operators: influence count times range width.

        A group of ``w`` events touches up to ``w`` times as many firings.
        """
        n = smul(Fraction(self.spec.group_size), self.influence(e, x))
        return smul(n, self.range(e, x).width)

    def bound(self, e, x: str) -> Number:
        if isinstance(e, (Const, Laplace)):
            return Fraction(0)
        if isinstance(e, (Ref, Offset)):
            return self.stream_bound(e.stream)
        if isinstance(e, Hold):
            factor = INF if e.bound is None else Fraction(e.bound)
            return smul(factor, self.stream_bound(e.stream))
        if isinstance(e, Aggregate):
            if e.func == "count":
                return Fraction(0)
            return smul(self.mult(x, e.window), self.stream_bound(e.stream))
        if isinstance(e, TreeAggregate):
            return INF  # noisy release; never re-analysed as private
        if isinstance(e, BinOp) and e.op in ("+", "-"):
            return self.bound(e.left, x) + self.bound(e.right, x)
        if isinstance(e, BinOp) and e.op == "*":
            c = const_value(e.left)
            if c is not None:
                return smul(abs(c), self.bound(e.right, x))
            c = const_value(e.right)
            if c is not None:
                return smul(abs(c), self.bound(e.left, x))
            return self.range_rule(e, x)
        if isinstance(e, BinOp):  # min / max are 1-Lipschitz in each operand
            return min(self.bound(e.left, x) + self.bound(e.right, x), self.range_rule(e, x))
        if isinstance(e, Clamp):
            return min(self.bound(e.expr, x), self.range_rule(e, x))
        if isinstance(e, Default):
            if bottom_depends_on_values(e.expr):
                return self.range_rule(e, x)
            return min(self.bound(e.expr, x) + self.bound(e.fallback, x), self.range_rule(e, x))
        if isinstance(e, Ite):
            rule = self.range_rule(e, x)
            if self.influence(e.cond, x) == 0 and not bottom_depends_on_values(e):
                return min(self.bound(e.then, x) + self.bound(e.orelse, x), rule)
            return rule
        raise TypeError(e)


def compute_value_ranges(typed: TypedSpec) -> dict[str, ValueRange]:
    a = _Analyzer(typed)
    return {n: a.stream_range(n) for n in typed.spec.stream_names}


def compute_influence_bounds(typed: TypedSpec, closed_windows: bool = False,
                             strict: bool = False) -> dict[str, Number]:
    """Influence count per stream; ``inf`` marks unbounded influence.

    With ``strict`` an unbounded count raises :class:`UnboundedInfluence`.
    """
    a = _Analyzer(typed, closed_windows)
    out = {n: a.stream_influence(n) for n in typed.spec.stream_names}
    if strict:
        bad = [n for n, v in out.items() if v == INF]
        if bad:
            raise UnboundedInfluence(f"unbounded influence on {', '.join(bad)}")
    return out


def compute_sensitivity_bounds(typed: TypedSpec, closed_windows: bool = False) -> SensitivityReport:
    a = _Analyzer(typed, closed_windows)
    spec = typed.spec
    streams: dict[str, StreamInfo] = {}
    segment: dict[str, str] = {}

    def seg(n: str) -> str:
        if n in segment:
            return segment[n]
        segment[n] = POST  # provisional while visiting (cycles resolve to POST)
        ok = n not in a.cyclic and a.stream_bound(n) != INF
        if ok and not spec.is_input(n):
            ok = not spec.output(n).is_tuple and all(
                seg(d.dst) == PRIVATE for d in typed.graph.deps(n))
        segment[n] = PRIVATE if ok else POST
        return segment[n]

    for n in spec.stream_names:
        s = seg(n)
        streams[n] = StreamInfo(
            a.stream_range(n), a.stream_influence(n), a.stream_bound(n) if s == PRIVATE else INF, s)
    return SensitivityReport(typed, streams, closed_windows)


def relevant_streams(typed: TypedSpec) -> set[str]:
    """Streams on some input-to-public path."""
    flow = typed.graph.flow_graph()
    down = set()
    for i in typed.spec.input_names:
        down |= {i} | nx.descendants(flow, i)
    up = set()
    for p in typed.spec.public:
        up |= {p} | nx.ancestors(flow, p)
    return down & up


def analyze(spec: Specification, closed_windows: bool = False) -> SensitivityReport:
    """Type-check ``spec`` and compute its full sensitivity report."""
    if not spec.public:
        raise NoPublicOutput("specification has no public output")
    typed = check_specification(spec)
    relevant = relevant_streams(typed)
    for d in spec.inputs:
        if d.name in relevant and not d.bounded:
            raise MissingRange(f"input {d.name!r} reaches a public output but declares no range")
    return compute_sensitivity_bounds(typed, closed_windows)


# ------------------------------------------------------------------ oracles
class DeltaOracle:
    """Per-event sensitivity for one pacing model and one changed timestamp.

    ``delta(x, t)`` bounds ``|w(x)(t) - w'(x)(t)|`` for any pair of adjacent
    runs that differ only at ``changed``.
    """

    def __init__(self, typed: TypedSpec, pm: PacingModel, changed: int, closed_windows: bool = False):
        self.typed = typed
        self.spec = typed.spec
        self.pm = pm
        self.changed = changed
        self.closed = closed_windows
        self.an = _Analyzer(typed, closed_windows)
        self._delta: dict = {}
        self._infl: dict = {}

    # -- influence relation
    def influenced(self, x: str, t: Optional[int]) -> bool:
        if t is None:
            return False
        key = (x, t)
        if key not in self._infl:
            if self.spec.is_input(x):
                r = t == self.changed
            else:
                r = self._infl_expr(self.spec.output(x).expr, x, t)
            self._infl[key] = r
        return self._infl[key]

    def _infl_expr(self, e, x: str, t: int) -> bool:
        if isinstance(e, (Const, Laplace)):
            return False
        if isinstance(e, Ref):
            return self.influenced(e.stream, t)
        if isinstance(e, Offset):
            return self.influenced(e.stream, last_event(self.pm, e.stream, t, e.by))
        if isinstance(e, Hold):
            if e.bound is not None and holdn(self.pm, x, e.stream, t) > e.bound:
                return False
            return self.influenced(e.stream, last_event(self.pm, e.stream, t, 0))
        if isinstance(e, Aggregate):
            if e.func == "count":
                return False
            ts = window_times(self.pm, e.stream, t, e.window, self.closed)
            if e.func == "last":
                ts = ts[-1:]
            return any(self.influenced(e.stream, u) for u in ts)
        if isinstance(e, Default):
            return self._infl_expr(e.expr, x, t) or self._infl_expr(e.fallback, x, t)
        if isinstance(e, Ite):
            return any(self._infl_expr(c, x, t) for c in (e.cond, e.then, e.orelse))
        if isinstance(e, (BinOp, Cmp)):
            return self._infl_expr(e.left, x, t) or self._infl_expr(e.right, x, t)
        if isinstance(e, Clamp):
            return self._infl_expr(e.expr, x, t)
        raise TypeError(f"oracle does not support {type(e).__name__}")

    # -- per-event sensitivity
    def delta(self, x: str, t: Optional[int]) -> Number:
        if t is None:
            return Fraction(0)
        key = (x, t)
        if key not in self._delta:
            if self.spec.is_input(x):
                d = self.an.input_distance(x) if t == self.changed and self.pm.fires_at(x, t) else Fraction(0)
            else:
                d = self._delta_expr(self.spec.output(x).expr, x, t)
            self._delta[key] = d
        return self._delta[key]

    def _range_rule(self, e, x: str, t: int) -> Number:
        if not self._infl_expr(e, x, t):
            return Fraction(0)
        return self.an.range(e, x).width

    def _delta_expr(self, e, x: str, t: int) -> Number:
        if isinstance(e, Const):
            return Fraction(0)
        if isinstance(e, Ref):
            return self.delta(e.stream, t)
        if isinstance(e, Offset):
            return self.delta(e.stream, last_event(self.pm, e.stream, t, e.by))
        if isinstance(e, Hold):
            if e.bound is not None and holdn(self.pm, x, e.stream, t) > e.bound:
                return Fraction(0)
            return self.delta(e.stream, last_event(self.pm, e.stream, t, 0))
        if isinstance(e, Aggregate):
            if e.func == "count":
                return Fraction(0)
            ts = window_times(self.pm, e.stream, t, e.window, self.closed)
            if not ts:
                return Fraction(0)
            if e.func == "last":
                return self.delta(e.stream, ts[-1])
            total = sum((self.delta(e.stream, u) for u in ts), Fraction(0))
            return total / len(ts) if e.func == "avg" else total
        if isinstance(e, BinOp) and e.op in ("+", "-"):
            return self._delta_expr(e.left, x, t) + self._delta_expr(e.right, x, t)
        if isinstance(e, BinOp) and e.op == "*":
            c = const_value(e.left)
            if c is not None:
                return smul(abs(c), self._delta_expr(e.right, x, t))
            c = const_value(e.right)
            if c is not None:
                return smul(abs(c), self._delta_expr(e.left, x, t))
            return self._range_rule(e, x, t)
        if isinstance(e, BinOp):
            return min(self._delta_expr(e.left, x, t) + self._delta_expr(e.right, x, t), self._range_rule(e, x, t))
        if isinstance(e, Clamp):
            return min(self._delta_expr(e.expr, x, t), self._range_rule(e, x, t))
        if isinstance(e, Default):
            if bottom_depends_on_values(e.expr):
                return self._range_rule(e, x, t)
            return min(max(self._delta_expr(e.expr, x, t), self._delta_expr(e.fallback, x, t)),
                       self._range_rule(e, x, t))
        if isinstance(e, Ite):
            rule = self._range_rule(e, x, t)
            if not self._infl_expr(e.cond, x, t) and not bottom_depends_on_values(e):
                return min(max(self._delta_expr(e.then, x, t), self._delta_expr(e.orelse, x, t)), rule)
            return rule
        raise TypeError(f"oracle does not support {type(e).__name__}")

    def total(self, x: str) -> Number:
        """Sum of per-event sensitivities over every firing of ``x``."""
        return sum((self.delta(x, t) for t in self.pm.fires[x]), Fraction(0))


def per_event_sensitivity(typed: TypedSpec, pm: PacingModel, changed: int, x: str, t: int,
                          closed_windows: bool = False) -> Number:
    return DeltaOracle(typed, pm, changed, closed_windows).delta(x, t)


def check_adjacent_traces(report: SensitivityReport, trace: Trace, index: int,
                          perturbation: Mapping[str, float], horizon=None) -> dict[str, float]:
    """Noise-free L1 distance per private stream between ``trace`` and its neighbour.

    The neighbour replaces the values of record ``index`` by the perturbed ones.
    """
    from .runtime import evaluate

    spec = report.spec
    rec = trace.records[index]
    changed = {}
    for name, delta in perturbation.items():
        if name not in rec.values:
            raise PerturbationOutOfRange(f"input {name!r} has no event in record {index}")
        d = spec.decl(name)
        v = rec.values[name] + delta
        if (d.lo is not None and v < d.lo) or (d.hi is not None and v > d.hi):
            raise PerturbationOutOfRange(f"{name} = {v} leaves range [{d.lo}, {d.hi}]")
        changed[name] = v
    other = trace.with_values(index, changed)
    a = evaluate(spec, trace, horizon=horizon, noise=False, closed_windows=report.closed_windows)
    b = evaluate(spec, other, horizon=horizon, noise=False, closed_windows=report.closed_windows)
    out = {}
    for x in spec.value_streams:
        if report.streams[x].segment != PRIVATE:
            continue
        out[x] = sum(abs(u - v) for u, v in zip(a.values(x), b.values(x)))
    return out
