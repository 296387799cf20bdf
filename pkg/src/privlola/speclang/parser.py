"""Recursive-descent parser for the stream specification language.

Surface syntax (one declaration per line is customary, but newlines are not
significant)::

    #![group_size = 1]
    input score : Int64 range [1, 6]
    output adj := (6 - score) * 3 + conf + 1
    output davg @1d := adj.aggregate(over: 3d, using: avg).defaults(to: 0.0)
    #[public]
    output range @1d := (low, high)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from ..errors import (
    DuplicateStream,
    InvalidOffset,
    SpecSyntaxError,
    UnknownReference,
)
from .ast import (
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
    Laplace,
    Offset,
    OutputDecl,
    Periodic,
    Ref,
    Specification,
    TreeAggregate,
    Tuple,
    accesses,
)

UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}
KEYWORDS = {"input", "output", "if", "then", "else", "min", "max", "clamp", "laplace", "tree", "all"}
AGG_NAMES = {"sum": "sum", "avg": "avg", "average": "avg", "count": "count", "last": "last"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<duration>\d+(?:\.\d+)?(?:s|m|h|d)(?![A-Za-z0-9_]))
  | (?P<number>\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\#!\[|\#\[|:=|<=|>=|==|[-+*()\[\],:@&.<>=\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # name | number | duration | op | eof
    text: str
    line: int
    column: int
    index: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1,
                                  token_index=len(tokens))
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, m.start() - line_start + 1, len(tokens)))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1, len(tokens)))
    return tokens


def parse_number(text: str) -> Fraction:
    return Fraction(text)


def parse_duration(text: str) -> Fraction:
    return Fraction(text[:-1]) * UNITS[text[-1]]


class Parser:
    def __init__(self, text: str, allow_compiled: bool = False):
        self.tokens = tokenize(text)
        self.pos = 0
        self.allow_compiled = allow_compiled

    # -- token helpers -------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def error(self, message: str, *expected: str, tok: Optional[Token] = None, cls=SpecSyntaxError):
        tok = tok or self.tok
        found = tok.text or "end of input"
        return cls(f"{message}, found {found!r}", tok.line, tok.column, expected, tok.index)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            tok = self.tok
            self.pos += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            raise self.error("unexpected token", repr(text))
        return tok

    def expect_name(self) -> str:
        tok = self.tok
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise self.error("unexpected token", "stream name")
        self.pos += 1
        return tok.text

    def expect_number(self, signed: bool = True) -> Fraction:
        neg = signed and self.accept("-") is not None
        tok = self.tok
        if tok.kind != "number":
            raise self.error("unexpected token", "number")
        self.pos += 1
        value = parse_number(tok.text)
        return -value if neg else value

    def expect_int(self) -> int:
        value = self.expect_number(signed=False)
        if value.denominator != 1:
            raise self.error("expected an integer", "integer", tok=self.tokens[self.pos - 1])
        return int(value)

    def expect_duration_or_all(self) -> Optional[Fraction]:
        tok = self.tok
        if tok.kind == "duration":
            self.pos += 1
            value = parse_duration(tok.text)
            if value <= 0:
                raise self.error("duration must be positive", tok=tok)
            return value
        if self.accept("all"):
            return None
        raise self.error("unexpected token", "duration", "'all'")

    # -- declarations --------------------------------------------------
    def parse(self) -> Specification:
        inputs: list[InputDecl] = []
        outputs: list[OutputDecl] = []
        group_size = 1
        public_pending: Optional[Token] = None
        while self.tok.kind != "eof":
            if self.accept("#!["):
                key = self.expect_name()
                if key != "group_size":
                    raise self.error("unknown pragma", "group_size", tok=self.tokens[self.pos - 1])
                self.expect("=")
                group_size = self.expect_int()
                if group_size < 1:
                    raise self.error("group size must be positive", tok=self.tokens[self.pos - 1])
                self.expect("]")
            elif self.at("#["):
                public_pending = self.tok
                self.pos += 1
                if self.tok.text != "public":
                    raise self.error("unknown annotation", "'public'")
                self.pos += 1
                self.expect("]")
                if not self.at("output"):
                    raise self.error("annotation must precede an output", "'output'")
            elif self.accept("input"):
                inputs.append(self.parse_input())
            elif self.accept("output"):
                outputs.append(self.parse_output(public_pending is not None))
                public_pending = None
            else:
                raise self.error("unexpected token", "'input'", "'output'", "'#['")
        spec = Specification(tuple(inputs), tuple(outputs), group_size)
        check_references(spec)
        return spec

    def parse_input(self) -> InputDecl:
        name_tok = self.tok
        name = self.expect_name()
        self.expect(":")
        if self.tok.text == "range":
            raise self.error("missing type", "type name")
        typ = self.expect_name()
        lo = hi = None
        if self.accept("range"):
            self.expect("[")
            lo = self.expect_number()
            self.expect(",")
            hi = self.expect_number()
            self.expect("]")
            if lo > hi:
                raise self.error("empty range", tok=name_tok)
        return InputDecl(name, typ, lo, hi)

    def parse_output(self, public: bool) -> OutputDecl:
        name = self.expect_name()
        pacing = None
        if self.accept("@"):
            pacing = self.parse_pacing()
        self.expect(":=")
        if self.at("(") and self.peek().kind == "name" and self.peek(2).text == ",":
            expr = self.parse_tuple()
        else:
            expr = self.parse_expr()
        return OutputDecl(name, expr, pacing, public)

    def parse_pacing(self):
        tok = self.tok
        if tok.kind == "duration":
            self.pos += 1
            pacing = Periodic(parse_duration(tok.text))
        else:
            paren = self.accept("(") is not None
            names = [self.expect_name()]
            while self.accept("&"):
                names.append(self.expect_name())
            if paren:
                self.expect(")")
            pacing = EventBased(frozenset(names))
        self.accept("@")
        return pacing

    def parse_tuple(self) -> Tuple:
        self.expect("(")
        members = [self.expect_name()]
        while self.accept(","):
            members.append(self.expect_name())
        self.expect(")")
        return Tuple(tuple(members))

    # -- expressions ---------------------------------------------------
    def parse_expr(self):
        if self.accept("if"):
            cond = self.parse_cond()
            self.expect("then")
            then = self.parse_expr()
            self.expect("else")
            orelse = self.parse_expr()
            return Ite(cond, then, orelse)
        return self.parse_additive()

    def parse_cond(self) -> Cmp:
        left = self.parse_additive()
        tok = self.tok
        if tok.kind == "op" and tok.text in ("<", "<=", "=", "==", ">", ">="):
            self.pos += 1
            op = "=" if tok.text == "==" else tok.text
            return Cmp(op, left, self.parse_additive())
        raise self.error("unexpected token", "comparison operator")

    def parse_additive(self):
        left = self.parse_mult()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.pos += 1
            left = BinOp(op, left, self.parse_mult())
        return left

    def parse_mult(self):
        left = self.parse_unary()
        while self.accept("*"):
            left = BinOp("*", left, self.parse_unary())
        return left

    def parse_unary(self):
        if self.accept("-"):
            if self.tok.kind == "number":
                return self.parse_postfix(Const(-self.expect_number(signed=False)))
            return BinOp("*", Const(Fraction(-1)), self.parse_unary())
        return self.parse_postfix(self.parse_primary())

    def parse_primary(self):
        tok = self.tok
        if tok.kind == "number":
            return Const(self.expect_number(signed=False))
        if self.accept("("):
            e = self.parse_expr()
            self.expect(")")
            return e
        if tok.kind == "name":
            if tok.text in ("min", "max"):
                self.pos += 1
                self.expect("(")
                a = self.parse_expr()
                self.expect(",")
                b = self.parse_expr()
                self.expect(")")
                return BinOp(tok.text, a, b)
            if tok.text == "clamp":
                self.pos += 1
                self.expect("(")
                e = self.parse_expr()
                self.expect(",")
                lo = self.expect_number()
                self.expect(",")
                hi = self.expect_number()
                self.expect(")")
                if lo > hi:
                    raise self.error("clamp bounds are inverted", tok=tok)
                return Clamp(e, lo, hi)
            if tok.text in ("laplace", "tree"):
                if not self.allow_compiled:
                    raise self.error(f"'{tok.text}' is reserved for compiler output")
                self.pos += 1
                return self.parse_laplace() if tok.text == "laplace" else self.parse_tree()
            return Ref(self.expect_name())
        raise self.error("unexpected token", "expression")

    def parse_laplace(self) -> Laplace:
        self.expect("(")
        scale = self.expect_number(signed=False)
        self.expect(")")
        return Laplace(scale)

    def parse_tree(self) -> TreeAggregate:
        self.expect("(")
        stream = self.expect_name()
        self.expect(",")
        self.expect("over")
        self.expect(":")
        window = self.expect_duration_or_all()
        self.expect(",")
        self.expect("using")
        self.expect(":")
        func = self.parse_agg_name()
        self.expect(",")
        self.expect("sensitivity")
        self.expect(":")
        sens = self.expect_number(signed=False)
        self.expect(",")
        self.expect("epsilon")
        self.expect(":")
        eps = self.expect_number(signed=False)
        self.expect(",")
        self.expect("budget")
        self.expect(":")
        budget = self.expect_name()
        if budget not in ("geometric", "uniform"):
            raise self.error("unknown tree budget", "'geometric'", "'uniform'", tok=self.tokens[self.pos - 1])
        self.expect(")")
        return TreeAggregate(stream, window, func, sens, eps, budget)

    def parse_agg_name(self) -> str:
        tok = self.tok
        if tok.kind == "name" and tok.text in AGG_NAMES:
            self.pos += 1
            return AGG_NAMES[tok.text]
        raise self.error("unknown aggregation", "sum", "avg", "count", "last")

    def parse_postfix(self, e):
        while self.accept("."):
            method_tok = self.tok
            method = self.expect_name()
            self.expect("(")
            if method == "defaults":
                self.expect("to")
                self.expect(":")
                e = Default(e, self.parse_expr())
                self.expect(")")
                continue
            if not isinstance(e, Ref):
                raise self.error(f"'.{method}' needs a stream on its left", tok=method_tok)
            stream = e.stream
            if method == "offset":
                self.expect("by")
                self.expect(":")
                by_tok = self.tok
                value = self.expect_number()
                if value.denominator != 1 or value >= 0:
                    raise self.error("offset must be a negative integer", tok=by_tok, cls=InvalidOffset)
                self.expect(")")
                e = Offset(stream, int(-value))
            elif method == "hold":
                bound, fallback = None, None
                while not self.at(")"):
                    if self.accept("for"):
                        self.expect(":")
                        bound_tok = self.tok
                        bound = self.expect_int()
                        if bound < 1:
                            raise self.error("hold bound must be positive", tok=bound_tok)
                    elif self.accept("or"):
                        self.expect(":")
                        fallback = self.parse_expr()
                    else:
                        raise self.error("unexpected token", "'for'", "'or'", "')'")
                    if not self.at(")"):
                        self.expect(",")
                self.expect(")")
                e = Hold(stream, bound)
                if fallback is not None:
                    e = Default(e, fallback)
            elif method == "last":
                self.expect("or")
                self.expect(":")
                fallback = self.parse_expr()
                self.expect(")")
                e = Default(Offset(stream, 1), fallback)
            elif method == "aggregate":
                self.expect("over")
                self.expect(":")
                window = self.expect_duration_or_all()
                self.expect(",")
                self.expect("using")
                self.expect(":")
                func = self.parse_agg_name()
                self.expect(")")
                e = Aggregate(stream, window, func)
            else:
                raise self.error("unknown method", "offset", "hold", "last", "defaults", "aggregate",
                                 tok=method_tok)
        return e


def check_references(spec: Specification) -> None:
    seen: set[str] = set()
    for name in spec.stream_names:
        if name in seen:
            raise DuplicateStream(f"stream {name!r} declared twice")
        seen.add(name)
    inputs = set(spec.input_names)
    for out in spec.outputs:
        for acc in accesses(out.expr):
            if acc.stream not in seen:
                raise UnknownReference(f"{out.name!r} refers to unknown stream {acc.stream!r}")
        if isinstance(out.pacing, EventBased):
            for trig in out.pacing.triggers:
                if trig not in inputs:
                    raise UnknownReference(f"pacing of {out.name!r} names {trig!r}, which is not an input")
        if out.is_tuple:
            for m in out.expr.members:
                if m in inputs or m not in seen or spec.output(m).is_tuple:
                    raise UnknownReference(f"tuple {out.name!r} member {m!r} must be a value output")


def parse_specification(text: str, allow_compiled: bool = False) -> Specification:
    """Parse ``text`` into a :class:`Specification`.

    ``laplace(...)`` and ``tree(...)`` terms are only accepted with
    ``allow_compiled=True``; they are emitted by the noise-injection pass.
    """
    return Parser(text, allow_compiled).parse()
