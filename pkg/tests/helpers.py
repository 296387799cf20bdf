"""Shared generators for property tests.

``random_case`` builds a well-typed specification, a trace for it and an
in-range single-record perturbation, all from one ``random.Random``.
"""

from __future__ import annotations

import random
from fractions import Fraction

from privlola.semantics import check_specification, make_trace, may_be_bottom
from privlola.speclang.ast import (
    Aggregate,
    BinOp,
    Clamp,
    Cmp,
    Const,
    Default,
    EventBased,
    Hold,
    InputDecl,
    Ite,
    Offset,
    OutputDecl,
    Periodic,
    Ref,
    Specification,
)
from privlola.specs import FEEDBACK
from privlola.speclang import parse_specification

PERIODS = (Fraction(1), Fraction(2))
WINDOWS = (Fraction(1), Fraction(2), Fraction(3), Fraction(5, 2), Fraction(4))


def feedback_spec() -> Specification:
    return parse_specification(FEEDBACK)


class _SpecBuilder:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.inputs: list[InputDecl] = []
        self.outputs: list[OutputDecl] = []
        self.pacing: dict[str, object] = {}

    def const(self) -> Const:
        return Const(Fraction(self.rng.randint(-4, 4), self.rng.choice((1, 1, 2))))

    def guard(self, e):
        return Default(e, self.const()) if may_be_bottom(e) else e

    def sync_ok(self, x_pacing, y: str) -> bool:
        py = self.pacing[y]
        if isinstance(x_pacing, EventBased):
            return isinstance(py, EventBased) and py.triggers <= x_pacing.triggers
        return isinstance(py, Periodic) and (x_pacing.period / py.period).denominator == 1

    def atom(self, name: str, pacing, depth: int):
        rng = self.rng
        known = list(self.pacing)
        sync = [y for y in known if self.sync_ok(pacing, y)]
        options = ["const"]
        if sync:
            options += ["ref", "ref", "offset"]
        options += ["hold"]
        if isinstance(pacing, Periodic):
            options += ["window", "window"]
        if rng.random() < 0.15:
            options.append("self")
        kind = rng.choice(options)
        if kind == "const":
            return self.const()
        if kind == "ref":
            return Ref(rng.choice(sync))
        if kind == "offset":
            return self.guard(Offset(rng.choice(sync), rng.randint(1, 2)))
        if kind == "self":
            return self.guard(Offset(name, 1))
        if kind == "hold":
            bound = rng.choice((None, 1, 2, 3)) if rng.random() < 0.2 else rng.choice((1, 2, 3))
            return self.guard(Hold(rng.choice(known), bound))
        func = rng.choice(("sum", "avg", "count", "last", "avg", "sum"))
        window = None if rng.random() < 0.1 else rng.choice(WINDOWS)
        return self.guard(Aggregate(rng.choice(known), window, func))

    def expr(self, name: str, pacing, depth: int):
        rng = self.rng
        if depth <= 0 or rng.random() < 0.3:
            return self.atom(name, pacing, depth)
        kind = rng.choice(("+", "-", "*c", "*", "min", "max", "ite", "clamp", "default"))
        sub = lambda: self.expr(name, pacing, depth - 1)  # noqa: E731
        if kind in ("+", "-", "min", "max", "*"):
            return BinOp(kind, sub(), sub())
        if kind == "*c":
            c = self.const()
            return BinOp("*", c, sub()) if rng.random() < 0.5 else BinOp("*", sub(), c)
        if kind == "ite":
            return Ite(Cmp(rng.choice(("<", "<=", "=", ">", ">=")), sub(), sub()), sub(), sub())
        if kind == "clamp":
            lo = rng.randint(-3, 3)
            return Clamp(sub(), Fraction(lo), Fraction(lo + rng.randint(0, 6)))
        inner = self.atom(name, pacing, depth)
        return Default(inner, sub())

    def build(self) -> Specification:
        rng = self.rng
        for i in range(rng.randint(1, 3)):
            lo = rng.randint(-5, 5)
            typ = rng.choice(("Int64", "Float64"))
            decl = InputDecl(f"i{i}", typ, Fraction(lo), Fraction(lo + rng.randint(0, 6)))
            self.inputs.append(decl)
            self.pacing[decl.name] = EventBased(frozenset({decl.name}))
        names = [d.name for d in self.inputs]
        for j in range(rng.randint(1, 5)):
            name = f"o{j}"
            if rng.random() < 0.5:
                pacing = Periodic(rng.choice(PERIODS))
            else:
                k = rng.randint(1, len(names))
                pacing = EventBased(frozenset(rng.sample(names, k)))
            e = self.expr(name, pacing, rng.randint(0, 3))
            self.outputs.append(OutputDecl(name, e, pacing, public=False))
            self.pacing[name] = pacing
        last = self.outputs[-1]
        self.outputs[-1] = OutputDecl(last.name, last.expr, last.pacing, True)
        return Specification(tuple(self.inputs), tuple(self.outputs), rng.choice((1, 1, 1, 2)))


def random_spec(rng: random.Random, attempts: int = 50) -> Specification:
    """A specification that passes every static check."""
    for _ in range(attempts):
        spec = _SpecBuilder(rng).build()
        try:
            check_specification(spec)
        except Exception:
            continue
        return spec
    raise RuntimeError("no well-typed specification generated")


def _value(rng: random.Random, d: InputDecl):
    if d.type == "Int64":
        return rng.randint(int(d.lo), int(d.hi))
    return float(d.lo + (d.hi - d.lo) * Fraction(rng.randint(0, 8), 8))


def random_trace(rng: random.Random, spec: Specification, max_records: int = 8):
    rows = []
    t = Fraction(0)
    for _ in range(rng.randint(1, max_records)):
        t += Fraction(rng.randint(1, 6), 2)
        present = [d for d in spec.inputs if rng.random() < 0.7] or [rng.choice(spec.inputs)]
        rows.append((t, {d.name: _value(rng, d) for d in present}))
    return make_trace(spec, rows)


def random_perturbation(rng: random.Random, spec: Specification, trace) -> tuple[int, dict]:
    index = rng.randrange(len(trace.records))
    rec = trace.records[index]
    delta = {}
    for name, old in rec.values.items():
        d = spec.decl(name)
        if rng.random() < 0.5:
            new = float(rng.choice((d.lo, d.hi)))
        else:
            new = float(_value(rng, d))
        delta[name] = new - old
    return index, delta


def random_case(seed: int):
    rng = random.Random(seed)
    spec = random_spec(rng)
    trace = random_trace(rng, spec)
    index, delta = random_perturbation(rng, spec, trace)
    horizon = trace.end + rng.randint(0, 6)
    return spec, trace, index, delta, horizon
