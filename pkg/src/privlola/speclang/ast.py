"""Immutable syntax tree for stream specifications.

Every node is a frozen dataclass, so structural equality and hashing come for
free; the round-trip tests rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Union

AGGREGATIONS = ("sum", "avg", "count", "last")
BINOPS = ("+", "-", "*", "min", "max")
CMPOPS = ("<", "<=", "=", ">", ">=")


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Ref:
    """Synchronous access to the current value of a stream."""

    stream: str


@dataclass(frozen=True)
class Offset:
    stream: str
    by: int  # number of firings back, >= 1


@dataclass(frozen=True)
class Hold:
    stream: str
    bound: Optional[int] = None  # None: unbounded


@dataclass(frozen=True)
class Aggregate:
    stream: str
    window: Optional[Fraction]  # seconds; None means all values since start
    func: str


@dataclass(frozen=True)
class Default:
    expr: "Expr"
    fallback: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Ite:
    cond: Cmp
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Clamp:
    expr: "Expr"
    lo: Fraction
    hi: Fraction


@dataclass(frozen=True)
class Laplace:
    """Compiler-emitted noise term; never accepted in user input."""

    scale: Fraction


@dataclass(frozen=True)
class TreeAggregate:
    """Compiler-emitted tree-mechanism node over ``stream``.

    ``window`` is ``None`` for an aggregation over all values, otherwise the
    sliding-window length in seconds. Each dyadic node gets noise of scale
    ``sensitivity / eps_k`` where ``eps_k`` splits ``epsilon`` across levels
    according to ``budget`` ("geometric" or "uniform").
    """

    stream: str
    window: Optional[Fraction]
    func: str
    sensitivity: Fraction
    epsilon: Fraction
    budget: str = "geometric"


@dataclass(frozen=True)
class Tuple:
    """``(a, b, ...)``: only legal as the whole right-hand side of an output."""

    members: tuple[str, ...]


Expr = Union[Const, Ref, Offset, Hold, Aggregate, Default, Ite, BinOp, Clamp, Laplace, TreeAggregate]


@dataclass(frozen=True)
class EventBased:
    triggers: frozenset[str]


@dataclass(frozen=True)
class Periodic:
    period: Fraction  # seconds


Pacing = Union[EventBased, Periodic]


@dataclass(frozen=True)
class InputDecl:
    name: str
    type: str = "Float64"
    lo: Optional[Fraction] = None
    hi: Optional[Fraction] = None

    @property
    def bounded(self) -> bool:
        return self.lo is not None and self.hi is not None


@dataclass(frozen=True)
class OutputDecl:
    name: str
    expr: Union[Expr, Tuple]
    pacing: Optional[Pacing] = None
    public: bool = False

    @property
    def is_tuple(self) -> bool:
        return isinstance(self.expr, Tuple)


@dataclass(frozen=True)
class Specification:
    inputs: tuple[InputDecl, ...] = ()
    outputs: tuple[OutputDecl, ...] = ()
    group_size: int = 1
    _index: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        index = {d.name: d for d in self.inputs}
        index.update({d.name: d for d in self.outputs})
        object.__setattr__(self, "_index", index)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.outputs)

    @property
    def stream_names(self) -> tuple[str, ...]:
        return self.input_names + self.output_names

    @property
    def value_streams(self) -> tuple[str, ...]:
        """Streams that carry values (tuple outputs excluded)."""
        return self.input_names + tuple(d.name for d in self.outputs if not d.is_tuple)

    @property
    def public(self) -> frozenset[str]:
        names = set()
        for d in self.outputs:
            if not d.public:
                continue
            if d.is_tuple:
                names.update(d.expr.members)
            else:
                names.add(d.name)
        return frozenset(names)

    def decl(self, name: str) -> Union[InputDecl, OutputDecl]:
        return self._index[name]

    def is_input(self, name: str) -> bool:
        return isinstance(self._index.get(name), InputDecl)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def output(self, name: str) -> OutputDecl:
        d = self._index[name]
        if not isinstance(d, OutputDecl):
            raise KeyError(name)
        return d

    def replace_output(self, decl: OutputDecl) -> "Specification":
        outs = tuple(decl if d.name == decl.name else d for d in self.outputs)
        return Specification(self.inputs, outs, self.group_size)


def children(e) -> Iterator:
    if isinstance(e, Default):
        yield e.expr
        yield e.fallback
    elif isinstance(e, Ite):
        yield e.cond
        yield e.then
        yield e.orelse
    elif isinstance(e, (BinOp, Cmp)):
        yield e.left
        yield e.right
    elif isinstance(e, Clamp):
        yield e.expr


def walk(e) -> Iterator:
    yield e
    for c in children(e):
        yield from walk(c)


def accesses(e) -> Iterator:
    """Yield every stream-access node in ``e`` (pre-order)."""
    if isinstance(e, Tuple):
        for m in e.members:
            yield Ref(m)
        return
    for node in walk(e):
        if isinstance(node, (Ref, Offset, Hold, Aggregate, TreeAggregate)):
            yield node


def map_streams(e, fn):
    """Rebuild ``e`` with every accessed stream name replaced by ``fn(name)``."""
    if isinstance(e, Ref):
        return Ref(fn(e.stream))
    if isinstance(e, Offset):
        return Offset(fn(e.stream), e.by)
    if isinstance(e, Hold):
        return Hold(fn(e.stream), e.bound)
    if isinstance(e, Aggregate):
        return Aggregate(fn(e.stream), e.window, e.func)
    if isinstance(e, TreeAggregate):
        return TreeAggregate(fn(e.stream), e.window, e.func, e.sensitivity, e.epsilon, e.budget)
    if isinstance(e, Tuple):
        return Tuple(tuple(fn(m) for m in e.members))
    if isinstance(e, Default):
        return Default(map_streams(e.expr, fn), map_streams(e.fallback, fn))
    if isinstance(e, Ite):
        return Ite(map_streams(e.cond, fn), map_streams(e.then, fn), map_streams(e.orelse, fn))
    if isinstance(e, BinOp):
        return BinOp(e.op, map_streams(e.left, fn), map_streams(e.right, fn))
    if isinstance(e, Cmp):
        return Cmp(e.op, map_streams(e.left, fn), map_streams(e.right, fn))
    if isinstance(e, Clamp):
        return Clamp(map_streams(e.expr, fn), e.lo, e.hi)
    return e
