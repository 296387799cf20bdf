"""Dependency graph, pacing types, traces and pacing models.

The helpers :func:`last_event`, :func:`window_times` and :func:`holdn` are the
single source of timing truth for both the evaluator and the sensitivity
oracle.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

import networkx as nx

from .errors import (
    IllegalCycle,
    MissingDefault,
    PacingMismatch,
    SpecError,
    UnresolvableInference,
    WindowInEventBased,
)
from .speclang import format_duration
from .speclang.ast import (
    Aggregate,
    BinOp,
    Clamp,
    Cmp,
    Const,
    Default,
    EventBased,
    Hold,
    Ite,
    Laplace,
    Offset,
    Periodic,
    Ref,
    Specification,
    TreeAggregate,
    accesses,
)

log = logging.getLogger(__name__)

# edge kinds whose target value is read at the accessor's own timestamp
SAME_TIME_KINDS = ("sync", "hold", "window", "tree")


@dataclass(frozen=True)
class Edge:
    src: str  # accessor
    dst: str  # accessed stream
    kind: str  # sync | offset | hold | window | tree
    offset: int = 0
    bound: Optional[int] = None
    window: Optional[Fraction] = None
    func: Optional[str] = None

    @property
    def label(self) -> str:
        if self.kind == "sync":
            return "0"
        if self.kind == "offset":
            return f"-{self.offset}"
        if self.kind == "hold":
            return "hold" if self.bound is None else f"hold{self.bound}"
        w = "all" if self.window is None else format_duration(self.window)
        return w if self.kind == "window" else f"tree {w}"


@dataclass(frozen=True)
class DependencyGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    inputs: frozenset[str]
    public: frozenset[str]
    tuples: frozenset[str] = frozenset()

    def deps(self, x: str) -> list[Edge]:
        return [e for e in self.edges if e.src == x]

    def consumers(self, y: str) -> list[str]:
        seen = []
        for e in self.edges:
            if e.dst == y and e.src not in seen:
                seen.append(e.src)
        return seen

    def to_networkx(self, kinds: Optional[Iterable[str]] = None) -> nx.DiGraph:
        """Accessor -> accessed digraph restricted to edge ``kinds``."""
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        kinds = None if kinds is None else set(kinds)
        for e in self.edges:
            if kinds is None or e.kind in kinds:
                g.add_edge(e.src, e.dst)
        return g

    def flow_graph(self) -> nx.DiGraph:
        """Data-flow digraph: an edge y -> x whenever x reads y."""
        return self.to_networkx().reverse(copy=True)


def _edge_for(src: str, acc) -> Edge:
    if isinstance(acc, Ref):
        return Edge(src, acc.stream, "sync")
    if isinstance(acc, Offset):
        return Edge(src, acc.stream, "offset", offset=acc.by)
    if isinstance(acc, Hold):
        return Edge(src, acc.stream, "hold", bound=acc.bound)
    if isinstance(acc, Aggregate):
        return Edge(src, acc.stream, "window", window=acc.window, func=acc.func)
    if isinstance(acc, TreeAggregate):
        return Edge(src, acc.stream, "tree", window=acc.window, func=acc.func)
    raise TypeError(acc)


def build_dependency_graph(spec: Specification) -> DependencyGraph:
    edges: list[Edge] = []
    for out in spec.outputs:
        for acc in accesses(out.expr):
            e = _edge_for(out.name, acc)
            if e not in edges:
                edges.append(e)
    graph = DependencyGraph(
        spec.stream_names,
        tuple(edges),
        frozenset(spec.input_names),
        spec.public,
        frozenset(d.name for d in spec.outputs if d.is_tuple),
    )
    same_time = graph.to_networkx(SAME_TIME_KINDS)
    try:
        cycle = nx.find_cycle(same_time)
    except nx.NetworkXNoCycle:
        return graph
    path = " -> ".join([cycle[0][0]] + [v for _, v in cycle])
    raise IllegalCycle(f"cycle without an offset access: {path}")


def evaluation_order(graph: DependencyGraph) -> list[str]:
    """Streams ordered so that same-timestamp reads see computed values."""
    g = graph.to_networkx(SAME_TIME_KINDS)
    position = {n: i for i, n in enumerate(graph.nodes)}
    order = list(nx.lexicographical_topological_sort(g.reverse(copy=True), key=position.__getitem__))
    return order


def _periodic_divides(px: Periodic, py: Periodic) -> bool:
    return (px.period / py.period).denominator == 1


def check_pacing_types(spec: Specification, graph: Optional[DependencyGraph] = None) -> dict[str, object]:
    """Resolve every stream's pacing and check the typing conditions.

    Inputs resolve to ``EventBased({name})``. An un-annotated output is
    event-based on the union of the trigger sets of the streams it accesses
    synchronously (sync or offset); if any of those is periodic, an annotation
    is required.
    """
    graph = graph or build_dependency_graph(spec)
    resolved: dict[str, object] = {i: EventBased(frozenset([i])) for i in spec.input_names}
    pending = [d for d in spec.outputs if d.pacing is None]
    for d in spec.outputs:
        if d.pacing is not None:
            resolved[d.name] = d.pacing
    while pending:
        progressed = False
        for d in list(pending):
            sync_targets = [e.dst for e in graph.deps(d.name) if e.kind in ("sync", "offset") and e.dst != d.name]
            if any(t not in resolved for t in sync_targets):
                continue
            pending.remove(d)
            progressed = True
            if any(isinstance(resolved[t], Periodic) for t in sync_targets):
                raise UnresolvableInference(f"{d.name!r} accesses a periodic stream synchronously; annotate its pacing")
            triggers = set()
            for t in sync_targets:
                triggers |= resolved[t].triggers
            if not triggers:
                if not spec.input_names:
                    raise UnresolvableInference(f"cannot infer a pacing for {d.name!r}")
                triggers = set(spec.input_names)
            resolved[d.name] = EventBased(frozenset(triggers))
        if not progressed:
            names = ", ".join(d.name for d in pending)
            raise UnresolvableInference(f"cannot infer pacing of {names}; annotate it")

    for out in spec.outputs:
        px = resolved[out.name]
        for e in graph.deps(out.name):
            if e.kind not in ("sync", "offset"):
                continue
            py = resolved[e.dst]
            ok = (
                isinstance(px, EventBased) and isinstance(py, EventBased) and py.triggers <= px.triggers
            ) or (isinstance(px, Periodic) and isinstance(py, Periodic) and _periodic_divides(px, py))
            if not ok:
                raise PacingMismatch(
                    f"{e.kind} access {out.name} -> {e.dst}: {out.name} may fire when {e.dst} does not"
                )
        for acc in accesses(out.expr):
            if isinstance(acc, (Aggregate, TreeAggregate)) and acc.window is not None and not isinstance(px, Periodic):
                raise WindowInEventBased(f"{out.name!r} aggregates a sliding window but is not periodic")
    return resolved


def may_be_bottom(e) -> bool:
    """Whether ``e`` can evaluate to no value at a firing of its stream."""
    if isinstance(e, (Const, Ref, Laplace)):
        return False
    if isinstance(e, (Offset, Hold)):
        return True
    if isinstance(e, (Aggregate, TreeAggregate)):
        return e.func in ("avg", "last")
    if isinstance(e, Default):
        return may_be_bottom(e.expr) and may_be_bottom(e.fallback)
    if isinstance(e, Ite):
        return may_be_bottom(e.cond) or may_be_bottom(e.then) or may_be_bottom(e.orelse)
    if isinstance(e, (BinOp, Cmp)):
        return may_be_bottom(e.left) or may_be_bottom(e.right)
    if isinstance(e, Clamp):
        return may_be_bottom(e.expr)
    raise TypeError(e)


def bottom_depends_on_values(e) -> bool:
    """Whether the absence of a value in ``e`` can differ between runs with identical timing.

    Only a conditional whose branches disagree on possibly being absent makes
    absence value-dependent.
    """
    if isinstance(e, Ite):
        if may_be_bottom(e.then) or may_be_bottom(e.orelse):
            return True
        return bottom_depends_on_values(e.cond)
    if isinstance(e, Default):
        return bottom_depends_on_values(e.expr) or bottom_depends_on_values(e.fallback)
    if isinstance(e, (BinOp, Cmp)):
        return bottom_depends_on_values(e.left) or bottom_depends_on_values(e.right)
    if isinstance(e, Clamp):
        return bottom_depends_on_values(e.expr)
    return False


def check_defaults(spec: Specification) -> None:
    for out in spec.outputs:
        if not out.is_tuple and may_be_bottom(out.expr):
            raise MissingDefault(f"{out.name!r} may have no value when it fires; add .defaults(to: ...)")


@dataclass(frozen=True)
class TypedSpec:
    """A specification that passed every static check, with derived facts."""

    spec: Specification
    graph: DependencyGraph
    pacing: dict
    order: tuple[str, ...]


def check_specification(spec: Specification) -> TypedSpec:
    graph = build_dependency_graph(spec)
    pacing = check_pacing_types(spec, graph)
    check_defaults(spec)
    return TypedSpec(spec, graph, pacing, tuple(evaluation_order(graph)))


# ---------------------------------------------------------------- traces
@dataclass(frozen=True)
class Record:
    time: Fraction
    values: Mapping[str, float]


@dataclass(frozen=True)
class Trace:
    records: tuple[Record, ...]
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def end(self) -> Fraction:
        return self.records[-1].time if self.records else Fraction(0)

    def with_values(self, index: int, values: Mapping[str, float]) -> "Trace":
        rec = self.records[index]
        merged = dict(rec.values)
        merged.update(values)
        records = list(self.records)
        records[index] = Record(rec.time, merged)
        return Trace(tuple(records), self.clamped)


def make_trace(spec: Specification, rows: Iterable[tuple], strict_order: bool = True) -> Trace:
    """Build a trace from ``(time, {input: value})`` rows, clamping to declared ranges."""
    records = []
    clamped = 0
    last = None
    for time, values in rows:
        time = Fraction(time)
        if time < 0:
            raise SpecError(f"negative trace time {time}")
        if last is not None and time <= last:
            raise SpecError(f"trace times must be strictly increasing ({time} after {last})")
        last = time
        clean = {}
        for name, v in values.items():
            if v is None:
                continue
            if not spec.is_input(name):
                raise SpecError(f"trace column {name!r} is not an input")
            d = spec.decl(name)
            v = float(v)
            if d.lo is not None and v < d.lo:
                v, clamped = float(d.lo), clamped + 1
            elif d.hi is not None and v > d.hi:
                v, clamped = float(d.hi), clamped + 1
            clean[name] = v
        records.append(Record(time, clean))
    if clamped:
        log.warning("clamped %d out-of-range input values", clamped)
    return Trace(tuple(records), clamped)


def read_trace_csv(spec: Specification, source) -> Trace:
    """Read a trace from a path or an open text stream."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return read_trace_csv(spec, fh)
    reader = csv.reader(source)
    header = next(reader)
    if not header or header[0].strip() != "time":
        raise SpecError("trace header must start with 'time'")
    names = [h.strip() for h in header[1:]]
    rows = []
    for row in reader:
        if not row:
            continue
        values = {n: (cell.strip() or None) for n, cell in zip(names, row[1:])}
        rows.append((Fraction(row[0].strip()), values))
    return make_trace(spec, rows)


def format_time(t: Fraction) -> str:
    if t.denominator == 1:
        return str(t.numerator)
    return repr(float(t)) if Fraction(float(t)) == t else str(float(t))


def _format_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def write_trace_csv(trace: Trace, inputs: Iterable[str], sink=None) -> str:
    inputs = list(inputs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *inputs])
    for rec in trace.records:
        t = rec.time
        stamp = format_time(t) if Fraction(float(t)) == t else f"{t.numerator}/{t.denominator}"
        w.writerow([stamp] + [_format_value(rec.values[n]) if n in rec.values else "" for n in inputs])
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


# ---------------------------------------------------------- pacing models
@dataclass
class PacingModel:
    """Firing schedule of every stream over a discrete timeline.

    ``times[t]`` is the real time (seconds) of discrete timestamp ``t``;
    ``fires[s]`` is the ascending tuple of timestamps at which ``s`` fires.
    """

    times: tuple[Fraction, ...]
    fires: dict[str, tuple[int, ...]]
    record_index: dict[int, int] = field(default_factory=dict)  # timestamp -> trace record
    _fire_sets: dict = field(default=None, repr=False)
    _fire_times: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._fire_sets = {s: frozenset(ts) for s, ts in self.fires.items()}
        self._fire_times = {s: [self.times[t] for t in ts] for s, ts in self.fires.items()}

    def fires_at(self, stream: str, t: int) -> bool:
        return t in self._fire_sets[stream]

    def realtime(self, t: int) -> Fraction:
        return self.times[t]

    def last_event(self, y: str, t: int, o: int) -> Optional[int]:
        return last_event(self, y, t, o)

    def window_times(self, y: str, t: int, window: Optional[Fraction], closed: bool = False) -> list[int]:
        return window_times(self, y, t, window, closed)


def derive_pacing_model(spec: Specification, pacing: Mapping[str, object], trace: Trace,
                        horizon: Optional[Fraction] = None) -> PacingModel:
    horizon = trace.end if horizon is None else Fraction(horizon)
    if horizon < trace.end:
        raise SpecError(f"horizon {horizon} ends before the trace ({trace.end})")
    stamps = {rec.time for rec in trace.records}
    periods = {p.period for p in pacing.values() if isinstance(p, Periodic)}
    for delta in periods:
        for k in range(int(horizon // delta) + 1):
            stamps.add(k * delta)
    times = tuple(sorted(stamps))
    index = {rt: i for i, rt in enumerate(times)}
    record_at = {index[rec.time]: i for i, rec in enumerate(trace.records)}
    fires: dict[str, tuple[int, ...]] = {}
    for name in spec.stream_names:
        p = pacing[name]
        if isinstance(p, Periodic):
            fires[name] = tuple(index[k * p.period] for k in range(int(horizon // p.period) + 1))
        else:
            fires[name] = tuple(
                index[rec.time] for rec in trace.records if all(trig in rec.values for trig in p.triggers)
            )
    return PacingModel(times, fires, record_at)


def last_event(pm: PacingModel, y: str, t: int, o: int) -> Optional[int]:
    """The ``o``-th most recent firing of ``y`` strictly before ``t``.

    ``o == 0`` gives the most recent firing at or before ``t`` (hold reads).
    """
    ts = pm.fires[y]
    if o == 0:
        i = bisect_right(ts, t) - 1
        return ts[i] if i >= 0 else None
    i = bisect_left(ts, t) - o
    return ts[i] if i >= 0 else None


def window_times(pm: PacingModel, y: str, t: int, window: Optional[Fraction], closed: bool = False) -> list[int]:
    """Firings ``t'`` of ``y`` with ``rt(t) - W < rt(t') <= rt(t)``.

    ``closed=True`` uses ``rt(t) - W <= rt(t')``; ``window=None`` takes every
    firing up to ``t``.
    """
    ts = pm.fires[y]
    rts = pm._fire_times[y]
    now = pm.times[t]
    hi = bisect_right(rts, now)
    if window is None:
        return list(ts[:hi])
    start = now - window
    lo = bisect_left(rts, start) if closed else bisect_right(rts, start)
    return list(ts[lo:hi])


def holdn(pm: PacingModel, x: str, y: str, t: int) -> int:
    """How many firings of ``x`` up to ``t`` read the same value of ``y`` as ``t``."""
    src = last_event(pm, y, t, 0)
    if src is None:
        return 0
    xs = pm.fires[x]
    return bisect_right(xs, t) - bisect_left(xs, src)


def window_multiplier(window: Fraction, period: Fraction, closed: bool = False) -> int:
    """Maximal number of firings (period ``period``) whose window contains one instant."""
    ratio = Fraction(window) / Fraction(period)
    return math.floor(ratio) + 1 if closed else math.ceil(ratio)


# ------------------------------------------------------------------- DOT
def to_dot(graph: DependencyGraph, bounds: Optional[Mapping[str, object]] = None,
           segments: Optional[Mapping[str, str]] = None) -> str:
    lines = ["digraph spec {", "  rankdir=TB;"]
    for n in graph.nodes:
        attrs = []
        label = n
        if bounds is not None and n in bounds:
            b = bounds[n]
            label = f"{n}\\n[{b}]"
        attrs.append(f'label="{label}"')
        if n in graph.inputs:
            attrs.append('color="red"')
        if n in graph.public:
            attrs.append("peripheries=2")
        if segments is not None and segments.get(n) == "private":
            attrs.append('style="filled" fillcolor="mistyrose"')
        elif segments is not None:
            attrs.append('style="filled" fillcolor="honeydew"')
        lines.append(f'  "{n}" [{" ".join(attrs)}];')
    for e in graph.edges:
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
