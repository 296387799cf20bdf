"""Deterministic stream evaluation with seeded noise.

Expressions are compiled to closures ``f(t, k)`` where ``t`` is the discrete
timestamp and ``k`` the firing index of the defining stream. ``None`` stands
for the absent value and propagates through every operator except
``defaults``.
"""

from __future__ import annotations

import json
import operator
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from ..errors import EvaluationError
from ..semantics import PacingModel, Trace, TypedSpec, check_specification, derive_pacing_model, format_time
from ..speclang.ast import (
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
from .rng import CounterRNG
from .tree import TreeState, tree_release

_TAG_LAPLACE = 1
_TAG_TREE = 2

_CMP = {"<": operator.lt, "<=": operator.le, "=": operator.eq, ">": operator.gt, ">=": operator.ge}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul, "min": min, "max": max}


@dataclass
class EvaluationModel:
    """Values of every stream at each of its firings, plus the time map."""

    times: tuple[Fraction, ...]
    streams: dict[str, list[tuple[int, Optional[float]]]]
    order: tuple[str, ...]  # declaration order, used for output

    def values(self, name: str) -> list[Optional[float]]:
        return [v for _, v in self.streams[name]]

    def series(self, name: str) -> list[tuple[Fraction, Optional[float]]]:
        return [(self.times[t], v) for t, v in self.streams[name]]

    def at(self, name: str, realtime) -> Optional[float]:
        realtime = Fraction(realtime)
        for t, v in self.streams[name]:
            if self.times[t] == realtime:
                return v
        return None

    def records(self, only: Optional[Iterable[str]] = None):
        """``(t, stream, value)`` in timestamp order, declaration order within one."""
        names = [n for n in self.order if only is None or n in set(only)]
        rank = {n: i for i, n in enumerate(names)}
        rows = [(t, rank[n], n, v) for n in names for t, v in self.streams[n] if v is not None]
        rows.sort(key=lambda r: (r[0], r[1]))
        return [(self.times[t], n, v) for t, _, n, v in rows]

    def to_jsonl(self, only: Optional[Iterable[str]] = None) -> str:
        out = []
        for rt, n, v in self.records(only):
            t = rt.numerator if rt.denominator == 1 else float(rt)
            out.append(json.dumps({"t": t, "stream": n, "value": v}))
        return "".join(line + "\n" for line in out)


class Monitor:
    """A type-checked specification bound to one trace and horizon.

    ``run`` can be called repeatedly with different seeds; the pacing model
    is derived once.
    """

    def __init__(self, spec, trace: Trace, horizon=None, closed_windows: bool = False,
                 typed: Optional[TypedSpec] = None):
        self.typed = typed or check_specification(spec)
        self.spec: Specification = self.typed.spec
        self.trace = trace
        self.closed = closed_windows
        self.pm: PacingModel = derive_pacing_model(self.spec, self.typed.pacing, trace, horizon)
        self.index = {n: i for i, n in enumerate(self.spec.stream_names)}
        value_streams = set(self.spec.value_streams)
        firing: dict[int, list[str]] = {}
        for name in self.typed.order:
            if name not in value_streams:
                continue
            for t in self.pm.fires[name]:
                firing.setdefault(t, []).append(name)
        self.schedule = sorted(firing.items())

    def run(self, seed: int = 0, noise: bool = True) -> EvaluationModel:
        return _Run(self, seed, noise).execute()


class _Run:
    def __init__(self, mon: Monitor, seed: int, noise: bool):
        self.mon = mon
        self.pm = mon.pm
        self.rng = CounterRNG(seed)
        self.noise = noise
        self.vals: dict[str, list] = {n: [] for n in mon.spec.stream_names}
        self.hooks: dict[str, list] = {}
        self.funcs = {}
        for d in mon.spec.outputs:
            if d.is_tuple:
                continue
            self._occ = 0
            self.hooks[d.name] = []
            self.funcs[d.name] = self.compile(d.expr, d.name)

    def execute(self) -> EvaluationModel:
        mon, pm, vals = self.mon, self.pm, self.vals
        records = mon.trace.records
        out = {n: [] for n in mon.spec.value_streams}
        for t, names in mon.schedule:
            rec = pm.record_index.get(t)
            for name in names:
                k = len(vals[name])
                if name in self.funcs:
                    for hook in self.hooks[name]:
                        hook(t, k)
                    v = self.funcs[name](t, k)
                    if v is None:
                        raise EvaluationError(f"{name} has no value at its firing {format_time(pm.times[t])}")
                else:
                    v = records[rec].values[name]
                vals[name].append(v)
                out[name].append((t, v))
        return EvaluationModel(pm.times, out, mon.spec.value_streams)

    # ------------------------------------------------------------ compile
    def compile(self, e, x: str):
        pm, vals = self.pm, self.vals
        if isinstance(e, Const):
            c = float(e.value)
            return lambda t, k: c
        if isinstance(e, Ref):
            fy, vy = pm.fires[e.stream], vals[e.stream]
            if fy == pm.fires[x]:
                return lambda t, k: vy[k]
            return lambda t, k: vy[bisect_left(fy, t)]
        if isinstance(e, Offset):
            fy, vy, o = pm.fires[e.stream], vals[e.stream], e.by

            def offset(t, k):
                i = bisect_left(fy, t) - o
                return vy[i] if i >= 0 else None
            return offset
        if isinstance(e, Hold):
            fy, vy, fx, bound = pm.fires[e.stream], vals[e.stream], pm.fires[x], e.bound

            def hold(t, k):
                i = bisect_right(fy, t) - 1
                if i < 0:
                    return None
                if bound is not None and bisect_right(fx, t) - bisect_left(fx, fy[i]) > bound:
                    return None
                return vy[i]
            return hold
        if isinstance(e, Aggregate):
            return self._window(e)
        if isinstance(e, TreeAggregate):
            return self._tree(e, x)
        if isinstance(e, Laplace):
            occ = self._next_occ()
            scale = float(e.scale)
            if not self.noise or scale == 0:
                return lambda t, k: 0.0
            sub = self.rng.substream(_TAG_LAPLACE, self.mon.index[x], occ)
            return lambda t, k: sub.laplace_at(scale, k)
        if isinstance(e, Default):
            fe, fd = self.compile(e.expr, x), self.compile(e.fallback, x)

            def default(t, k):
                v = fe(t, k)
                return fd(t, k) if v is None else v
            return default
        if isinstance(e, Ite):
            fc, fa, fb = self.compile(e.cond, x), self.compile(e.then, x), self.compile(e.orelse, x)

            def ite(t, k):
                c = fc(t, k)
                if c is None:
                    return None
                return fa(t, k) if c else fb(t, k)
            return ite
        if isinstance(e, (BinOp, Cmp)):
            op = _CMP[e.op] if isinstance(e, Cmp) else _ARITH[e.op]
            fl, fr = self.compile(e.left, x), self.compile(e.right, x)

            def binop(t, k):
                a = fl(t, k)
                if a is None:
                    return None
                b = fr(t, k)
                if b is None:
                    return None
                return op(a, b)
            return binop
        if isinstance(e, Clamp):
            f, lo, hi = self.compile(e.expr, x), float(e.lo), float(e.hi)

            def clamp(t, k):
                v = f(t, k)
                return None if v is None else min(max(v, lo), hi)
            return clamp
        raise EvaluationError(f"cannot evaluate {e!r}")

    def _next_occ(self) -> int:
        self._occ += 1
        return self._occ

    def _window(self, e: Aggregate):
        pm = self.pm
        rts, vy, window, func = pm._fire_times[e.stream], self.vals[e.stream], e.window, e.func
        times = pm.times
        left = bisect_left if self.mon.closed else bisect_right

        def aggregate(t, k):
            now = times[t]
            hi = bisect_right(rts, now)
            lo = 0 if window is None else left(rts, now - window)
            if func == "count":
                return float(hi - lo)
            if func == "sum":
                return sum(vy[lo:hi], 0.0)
            if hi == lo:
                return None
            if func == "last":
                return vy[hi - 1]
            return sum(vy[lo:hi], 0.0) / (hi - lo)
        return aggregate

    def _tree(self, e: TreeAggregate, x: str):
        pm = self.pm
        occ = self._next_occ()
        window_buckets = None
        if e.window is not None:
            p = self.mon.typed.pacing[x]
            if not isinstance(p, Periodic) or (e.window / p.period).denominator != 1:
                raise EvaluationError(f"tree window of {x} is not a multiple of its period")
            window_buckets = int(e.window / p.period)
        noise = None
        if self.noise:
            sub = self.rng.substream(_TAG_TREE, self.mon.index[x], occ)
            noise = lambda h, a, scale: sub.laplace_at(scale, h, a)  # noqa: E731
        state = TreeState(e.sensitivity, e.epsilon, window_buckets, e.budget, noise)
        fy, vy, fx = pm.fires[e.stream], self.vals[e.stream], pm.fires[x]
        cell = [None]
        counting = e.func == "count"

        def ingest(t, k):
            lo = bisect_right(fy, fx[k - 1]) if k else 0
            hi = bisect_right(fy, t)
            leaf = float(hi - lo) if counting else sum(vy[lo:hi], 0.0)
            state.add_leaf(leaf, hi - lo)
            cell[0] = tree_release(state, func="sum" if counting else e.func)
        self.hooks[x].append(ingest)
        return lambda t, k: cell[0]


def evaluate(spec, trace: Trace, horizon=None, seed: int = 0, noise: bool = True,
             closed_windows: bool = False) -> EvaluationModel:
    """Run ``spec`` (possibly noise-injected) over ``trace`` up to ``horizon``."""
    return Monitor(spec, trace, horizon, closed_windows).run(seed, noise)
