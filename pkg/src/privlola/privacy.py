"""Privacy barriers, budget allocation and the noise-injecting transforms."""

from __future__ import annotations

import itertools
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

import networkx as nx

from .errors import NoValidBarrier, NotTreeRewritable, SpecError
from .semantics import DependencyGraph, check_pacing_types, check_specification
from .sensitivity import PRIVATE, SensitivityReport, analyze, json_number
from .speclang.ast import (
    Aggregate,
    BinOp,
    Const,
    Default,
    EventBased,
    Laplace,
    Offset,
    OutputDecl,
    Periodic,
    Ref,
    Specification,
    TreeAggregate,
    map_streams,
    walk,
)

log = logging.getLogger(__name__)

PLAIN = "plain-laplace"
TREE_ALL = "tree-all"
TREE_SLIDING = "tree-sliding"

INPUT_ONLY = "input-only"
DEEP = "deep"
POST_AGGREGATION = "post-aggregation"
MINIMAL = "minimal"
HEURISTICS = (INPUT_ONLY, DEEP, POST_AGGREGATION, MINIMAL)

# subsets examined by the minimal heuristic before it gives up
MINIMAL_SEARCH_LIMIT = 50_000


# ------------------------------------------------------------- segments
def partition_segments(report: SensitivityReport) -> dict[str, str]:
    """Segment per stream, after checking closure and that a finite cut exists."""
    graph = report.graph
    segments = report.segments()
    for e in graph.edges:
        if segments[e.src] == PRIVATE and segments[e.dst] != PRIVATE:
            raise SpecError(f"private stream {e.src} reads post-processed {e.dst}")
    flow = graph.flow_graph()
    post_only = flow.subgraph(n for n, s in segments.items() if s != PRIVATE)
    for i in graph.inputs:
        if segments[i] == PRIVATE or i not in post_only:
            continue
        for p in graph.public:
            if p in post_only and nx.has_path(post_only, i, p):
                raise NoValidBarrier(f"every path from {i} to public {p} lies in the post-processed segment")
    return segments


# ----------------------------------------------------------- validation
@dataclass(frozen=True)
class BarrierCheck:
    ok: bool
    witness: tuple[str, ...] = ()
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _bfs_path(flow: nx.DiGraph, sources, goal, blocked=frozenset()):
    """Shortest path from any source to a node satisfying ``goal``, avoiding ``blocked``."""
    parent = {}
    queue = deque()
    for s in sources:
        if s in blocked or s in parent:
            continue
        parent[s] = None
        queue.append(s)
    while queue:
        n = queue.popleft()
        if goal(n):
            path = [n]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for m in flow.successors(n):
            if m not in parent and m not in blocked:
                parent[m] = n
                queue.append(m)
    return None


def validate_barriers(graph: DependencyGraph, barriers, publics=None) -> BarrierCheck:
    """Check that every input-to-public path crosses exactly one barrier."""
    barriers = frozenset(barriers)
    publics = graph.public if publics is None else frozenset(publics)
    flow = graph.flow_graph()
    inputs = sorted(graph.inputs, key=graph.nodes.index)
    path = _bfs_path(flow, inputs, lambda n: n in publics, blocked=barriers)
    if path is not None:
        return BarrierCheck(False, tuple(path), "path without a barrier")
    reaches_public = set(publics)
    for p in publics:
        reaches_public |= nx.ancestors(flow, p)
    for c in sorted(barriers, key=graph.nodes.index):
        head = _bfs_path(flow, inputs, lambda n: n == c)
        if head is None:
            continue
        others = barriers - {c}
        mid = _bfs_path(flow, [m for m in flow.successors(c)],
                        lambda n: n in others and n in reaches_public)
        if mid is None:
            continue
        tail = _bfs_path(flow, [mid[-1]], lambda n: n in publics)
        return BarrierCheck(False, tuple(head + mid + tail[1:]), "path with two barriers")
    return BarrierCheck(True)


# ------------------------------------------------------------ plans
@dataclass(frozen=True)
class NoiseTerm:
    target: str
    bound: Fraction
    epsilon: Fraction
    scale: Fraction
    mechanism: str


@dataclass(frozen=True)
class BarrierPlan:
    barriers: tuple[str, ...]
    budgets: dict = field(hash=False)
    mechanisms: dict = field(hash=False)
    bounds: dict = field(hash=False)
    epsilon: Fraction = Fraction(1)
    heuristic: str = DEEP

    def terms(self) -> list[NoiseTerm]:
        out = []
        for b in self.barriers:
            eps = self.budgets[b]
            out.append(NoiseTerm(b, self.bounds[b], eps, self.bounds[b] / eps, self.mechanisms[b]))
        return out

    def to_json(self) -> dict:
        return {
            "heuristic": self.heuristic,
            "epsilon": json_number(self.epsilon),
            "barriers": [
                {
                    "barrier": t.target,
                    "bound": json_number(t.bound),
                    "epsilon": json_number(t.epsilon),
                    "scale": json_number(t.scale),
                    "mechanism": t.mechanism,
                }
                for t in self.terms()
            ],
        }


def _strip_default(e):
    """``(inner, fallback)`` for ``inner.defaults(to: c)`` with a constant ``c``."""
    if isinstance(e, Default) and isinstance(e.fallback, Const):
        return e.expr, e.fallback
    return e, None


def _accumulation(decl: OutputDecl):
    """Leaf expression of ``x := x.offset(by: -1).defaults(to: 0) + e``, else ``None``."""
    e = decl.expr
    if not isinstance(e, BinOp) or e.op != "+":
        return None
    acc = Default(Offset(decl.name, 1), Const(Fraction(0)))
    for mine, other in ((e.left, e.right), (e.right, e.left)):
        if mine == acc and decl.name not in {a.stream for a in walk(other) if hasattr(a, "stream")}:
            return other
    return None


def tree_candidates(report: SensitivityReport) -> set[str]:
    """Streams that become barriers only through an all-aggregation tree."""
    spec = report.spec
    out = set()
    for d in spec.outputs:
        if d.is_tuple:
            continue
        inner, _ = _strip_default(d.expr)
        if (isinstance(inner, Aggregate) and inner.window is None and inner.func in ("sum", "count", "avg")
                and report.streams[inner.stream].segment == PRIVATE):
            out.add(d.name)
    return out


def tree_mechanism(report: SensitivityReport, name: str) -> Optional[str]:
    """Tree mechanism applicable to barrier ``name``, if any."""
    spec = report.spec
    if spec.is_input(name):
        return None
    inner, _ = _strip_default(spec.output(name).expr)
    if not isinstance(inner, Aggregate) or inner.func not in ("sum", "avg"):
        return None  # a count has zero sensitivity and needs no tree
    if report.streams[inner.stream].segment != PRIVATE:
        return None
    if inner.window is None:
        return TREE_ALL
    p = report.typed.pacing[name]
    if isinstance(p, Periodic) and (inner.window / p.period).denominator == 1:
        return TREE_SLIDING
    return None


def _depths(flow: nx.DiGraph, nodes: set[str], inputs) -> dict[str, int]:
    """Longest-path distance from the inputs inside the acyclic ``nodes``."""
    sub = flow.subgraph(nodes)
    depth = {}
    for n in nx.topological_sort(sub):
        preds = [depth[p] + 1 for p in sub.predecessors(n)]
        depth[n] = max(preds) if preds else 0
    return depth


class _Planner:
    def __init__(self, report: SensitivityReport, tree: bool):
        self.report = report
        self.graph = report.graph
        self.flow = self.graph.flow_graph()
        self.order = {n: i for i, n in enumerate(self.graph.nodes)}
        self.public = set(self.graph.public)
        down = set()
        for i in self.graph.inputs:
            down |= {i} | nx.descendants(self.flow, i)
        up = set()
        for p in self.public:
            up |= {p} | nx.ancestors(self.flow, p)
        self.relevant = down & up
        allowed = set(report.private)
        if tree:
            allowed |= tree_candidates(report)
        self.candidates = self.relevant & allowed

    def sorted(self, names) -> tuple[str, ...]:
        return tuple(sorted(names, key=self.order.__getitem__))

    def frontier(self, s: set[str]) -> set[str]:
        return {c for c in s if c in self.public
                or any(d in self.relevant and d not in s for d in self.flow.successors(c))}

    def close(self, s: set[str]) -> set[str]:
        """Shrink ``s`` until no frontier member feeds another member of ``s``."""
        s = set(s)
        while True:
            bad = [(c, d) for c in self.sorted(self.frontier(s))
                   for d in self.flow.successors(c) if d in s and d in self.relevant]
            if not bad:
                return s
            d = bad[0][1]
            s -= {d} | nx.descendants(self.flow, d)

    def input_only(self) -> set[str]:
        return {i for i in self.graph.inputs if i in self.relevant}

    def deep(self) -> set[str]:
        return self.frontier(self.close(self.candidates))

    def post_aggregation(self) -> set[str]:
        spec = self.report.spec
        s = set(self.candidates)
        for n in list(s):
            if spec.is_input(n):
                continue
            if any(isinstance(a, (Aggregate, TreeAggregate)) for a in walk(spec.output(n).expr)):
                s -= nx.descendants(self.flow, n)
        return self.frontier(self.close(s))

    def minimal(self) -> set[str]:
        if validate_barriers(self.graph, (), self.public):
            return set()
        lower = self._cut_lower_bound()
        cands = self.sorted(self.candidates)
        depth = _depths(self.flow, set(self.candidates), self.graph.inputs)
        examined = 0
        for size in range(max(lower, 1), len(cands) + 1):
            valid = []
            for combo in itertools.combinations(cands, size):
                examined += 1
                if examined > MINIMAL_SEARCH_LIMIT:
                    log.warning("minimal barrier search exhausted its budget; using the smallest heuristic plan")
                    plans = [self.input_only(), self.deep(), self.post_aggregation()]
                    return min(plans, key=len)
                if validate_barriers(self.graph, combo, self.public):
                    valid.append(combo)
            if valid:
                best = min(valid, key=lambda c: (-sum(depth.get(n, 0) for n in c),
                                                 [self.order[n] for n in c]))
                return set(best)
        raise NoValidBarrier("no barrier set crosses every input-to-public path exactly once")

    def _cut_lower_bound(self) -> int:
        g = nx.DiGraph()
        for n in self.relevant:
            if n in self.candidates:
                g.add_edge(("in", n), ("out", n), capacity=1)
            else:
                g.add_edge(("in", n), ("out", n))
            if n in self.graph.inputs:
                g.add_edge("source", ("in", n))
            if n in self.public:
                g.add_edge(("out", n), "sink")
        for u, v in self.flow.edges:
            if u in self.relevant and v in self.relevant:
                g.add_edge(("out", u), ("in", v))
        if "source" not in g or "sink" not in g:
            return 0
        try:
            value = nx.maximum_flow_value(g, "source", "sink")
        except nx.NetworkXUnbounded:
            raise NoValidBarrier("an input reaches a public output through non-candidate streams only")
        return int(value)


def split_budget(barriers, epsilon, weights: Optional[Mapping[str, Fraction]] = None) -> dict[str, Fraction]:
    epsilon = Fraction(epsilon)
    if not barriers:
        return {}
    if not weights:
        return {b: epsilon / len(barriers) for b in barriers}
    w = {b: Fraction(weights.get(b, 1)) for b in barriers}
    if any(v <= 0 for v in w.values()):
        raise SpecError("budget weights must be positive")
    total = sum(w.values())
    return {b: epsilon * w[b] / total for b in barriers}


def select_barriers(report: SensitivityReport, heuristic: str, epsilon=1, tree: bool = False,
                    weights: Optional[Mapping[str, Fraction]] = None) -> BarrierPlan:
    """Place barriers with ``heuristic`` and split ``epsilon`` across them."""
    epsilon = Fraction(epsilon)
    if epsilon <= 0:
        raise SpecError("epsilon must be positive")
    partition_segments(report)
    planner = _Planner(report, tree)
    chosen = {
        INPUT_ONLY: planner.input_only,
        DEEP: planner.deep,
        POST_AGGREGATION: planner.post_aggregation,
        MINIMAL: planner.minimal,
    }[heuristic]()
    barriers = planner.sorted(chosen)
    check = validate_barriers(report.graph, barriers)
    if not check:
        raise NoValidBarrier(f"{heuristic} produced an invalid plan: {check.reason} {' -> '.join(check.witness)}")
    mechanisms, bounds = {}, {}
    for b in barriers:
        mech = tree_mechanism(report, b) if tree else None
        mechanisms[b] = mech or PLAIN
        if mech is None:
            bounds[b] = Fraction(report.bound(b))
        else:
            inner, _ = _strip_default(report.spec.output(b).expr)
            bounds[b] = Fraction(report.bound(inner.stream))
    return BarrierPlan(barriers, split_budget(barriers, epsilon, weights), mechanisms, bounds, epsilon, heuristic)


# ------------------------------------------------------------ transforms
def _fresh(spec: Specification, base: str) -> str:
    name, i = base, 2
    while name in spec:
        name, i = f"{base}{i}", i + 1
    return name


def lift_accumulations(spec: Specification) -> tuple[Specification, dict[str, str]]:
    """Rewrite every ``x := x.offset(by: -1).defaults(to: 0) + e`` into an all-aggregation.

    ``e`` moves into a fresh stream paced like ``x``; returns the new spec and
    the map from rewritten stream to its leaf stream.
    """
    pacing = check_pacing_types(spec)
    outputs, leaves = [], {}
    used = set(spec.stream_names)
    for d in spec.outputs:
        leaf_expr = None if d.is_tuple else _accumulation(d)
        if leaf_expr is None:
            outputs.append(d)
            continue
        leaf, i = f"{d.name}_leaf", 2
        while leaf in used:
            leaf, i = f"{d.name}_leaf{i}", i + 1
        used.add(leaf)
        leaves[d.name] = leaf
        outputs.append(OutputDecl(leaf, leaf_expr, pacing[d.name]))
        outputs.append(OutputDecl(d.name, Aggregate(leaf, None, "sum"), pacing[d.name], d.public))
    return Specification(spec.inputs, tuple(outputs), spec.group_size), leaves


def rewrite_tree_aggregation(spec: Specification, barrier: str, epsilon, sensitivity=None,
                             budget: Optional[str] = None) -> Specification:
    """Replace the aggregation defining ``barrier`` by a tree-mechanism node.

    ``sensitivity`` defaults to the static bound of the aggregated stream.
    ``budget`` defaults to ``uniform`` for sliding windows and ``geometric``
    for all-aggregations.
    """
    if barrier not in spec or spec.is_input(barrier):
        raise NotTreeRewritable(f"{barrier!r} is not an output")
    decl = spec.output(barrier)
    if _accumulation(decl) is not None:
        spec, _ = lift_accumulations(spec)
        decl = spec.output(barrier)
    inner, fallback = _strip_default(decl.expr)
    if not isinstance(inner, Aggregate) or inner.func not in ("sum", "count", "avg"):
        raise NotTreeRewritable(f"{barrier} is not a single sum/count/avg aggregation")
    pacing = check_pacing_types(spec)[barrier]
    if inner.window is not None:
        if not isinstance(pacing, Periodic) or (inner.window / pacing.period).denominator != 1:
            raise NotTreeRewritable(f"window of {barrier} is not a whole number of its periods")
    if sensitivity is None:
        sensitivity = 0 if inner.func == "count" else analyze_bound(spec, inner.stream)
    if budget is None:
        budget = "uniform" if inner.window is not None else "geometric"
    node = TreeAggregate(inner.stream, inner.window, inner.func, Fraction(sensitivity), Fraction(epsilon), budget)
    expr = node if fallback is None else Default(node, fallback)
    return spec.replace_output(OutputDecl(barrier, expr, decl.pacing, decl.public))


def analyze_bound(spec: Specification, stream: str):
    """Static bound of ``stream`` ignoring which streams are public."""
    from .sensitivity import compute_sensitivity_bounds

    return compute_sensitivity_bounds(check_specification(spec)).bound(stream)


def inject_noise(spec: Specification, plan: BarrierPlan, tree_budget: Optional[str] = None) -> Specification:
    """Add calibrated noise at every barrier of ``plan``."""
    out = spec
    fresh_count = 0
    for term in plan.terms():
        x = term.target
        if term.mechanism in (TREE_ALL, TREE_SLIDING):
            budget = tree_budget if term.mechanism == TREE_SLIDING else None
            out = rewrite_tree_aggregation(out, x, term.epsilon, term.bound, budget)
            continue
        if term.scale == 0:
            continue
        if out.is_input(x):
            noisy = _fresh(out, f"{x}_noisy")
            outputs = [OutputDecl(d.name, map_streams(d.expr, lambda n: noisy if n == x else n), d.pacing, d.public)
                       for d in out.outputs]
            fresh = OutputDecl(noisy, BinOp("+", Ref(x), Laplace(term.scale)), EventBased(frozenset([x])))
            outputs.insert(fresh_count, fresh)
            fresh_count += 1
            out = Specification(out.inputs, tuple(outputs), out.group_size)
        else:
            d = out.output(x)
            out = out.replace_output(OutputDecl(x, BinOp("+", d.expr, Laplace(term.scale)), d.pacing, d.public))
    check_specification(out)
    return out


@dataclass
class Compiled:
    spec: Specification
    plan: BarrierPlan
    report: SensitivityReport
    source: Specification

    def sidecar(self) -> dict:
        data = self.plan.to_json()
        data["group_size"] = self.source.group_size
        return data

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), indent=2) + "\n"


def compile_specification(spec: Specification, epsilon=1, heuristic: str = DEEP, tree: bool = False,
                          weights: Optional[Mapping[str, Fraction]] = None, closed_windows: bool = False,
                          tree_budget: Optional[str] = None) -> Compiled:
    """Analysis, barrier selection and noise injection in one step."""
    source = spec
    if tree:
        spec, _ = lift_accumulations(spec)
    report = analyze(spec, closed_windows)
    plan = select_barriers(report, heuristic, epsilon, tree, weights)
    return Compiled(inject_noise(spec, plan, tree_budget), plan, report, source)
