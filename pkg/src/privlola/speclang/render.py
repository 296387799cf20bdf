"""Canonical text rendering; ``parse_specification(render_specification(s)) == s``."""

from __future__ import annotations

from fractions import Fraction

from .ast import (
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
    Tuple,
)

_UNIT_ORDER = (("d", 86400), ("h", 3600), ("m", 60))

# binding strength: higher binds tighter
_ITE, _ADD, _MUL, _ATOM = 0, 1, 2, 3


def format_number(x: Fraction) -> str:
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    den = x.denominator
    for p in (2, 5):
        while den % p == 0:
            den //= p
    if den != 1:
        return f"{x.numerator}/{x.denominator}"
    sign = "-" if x < 0 else ""
    x = abs(x)
    digits = 0
    while (x * 10**digits).denominator != 1:
        digits += 1
    scaled = int(x * 10**digits)
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


def format_duration(seconds: Fraction) -> str:
    seconds = Fraction(seconds)
    for unit, size in _UNIT_ORDER:
        if seconds >= size and (seconds / size).denominator == 1:
            return f"{(seconds / size).numerator}{unit}"
    text = format_number(seconds)
    if "/" in text:
        raise ValueError(f"duration {seconds} s has no decimal representation")
    return f"{text}s"


def render_pacing(p, input_order: tuple[str, ...] = ()) -> str:
    if isinstance(p, Periodic):
        return f"@{format_duration(p.period)}"
    names = sorted(p.triggers, key=lambda n: (input_order.index(n) if n in input_order else len(input_order), n))
    if len(names) == 1:
        return f"@{names[0]}"
    return "@(" + " & ".join(names) + ")"


def _prec(e) -> int:
    if isinstance(e, Ite):
        return _ITE
    if isinstance(e, BinOp) and e.op in ("+", "-"):
        return _ADD
    if isinstance(e, BinOp) and e.op == "*":
        return _MUL
    return _ATOM


def _wrap(e, min_prec: int) -> str:
    text = render_expr(e)
    return f"({text})" if _prec(e) < min_prec else text


def _window(w) -> str:
    return "all" if w is None else format_duration(w)


def render_expr(e) -> str:
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, Ref):
        return e.stream
    if isinstance(e, Offset):
        return f"{e.stream}.offset(by: -{e.by})"
    if isinstance(e, Hold):
        return f"{e.stream}.hold()" if e.bound is None else f"{e.stream}.hold(for: {e.bound})"
    if isinstance(e, Aggregate):
        return f"{e.stream}.aggregate(over: {_window(e.window)}, using: {e.func})"
    if isinstance(e, Default):
        inner = render_expr(e.expr)
        if _prec(e.expr) < _ATOM or (isinstance(e.expr, Const) and e.expr.value < 0):
            inner = f"({inner})"
        return f"{inner}.defaults(to: {render_expr(e.fallback)})"
    if isinstance(e, Cmp):
        op = "==" if e.op == "=" else e.op
        return f"{_wrap(e.left, _ADD)} {op} {_wrap(e.right, _ADD)}"
    if isinstance(e, Ite):
        return f"if {render_expr(e.cond)} then {render_expr(e.then)} else {render_expr(e.orelse)}"
    if isinstance(e, BinOp):
        if e.op in ("min", "max"):
            return f"{e.op}({render_expr(e.left)}, {render_expr(e.right)})"
        level = _ADD if e.op in ("+", "-") else _MUL
        return f"{_wrap(e.left, level)} {e.op} {_wrap(e.right, level + 1)}"
    if isinstance(e, Clamp):
        return f"clamp({render_expr(e.expr)}, {format_number(e.lo)}, {format_number(e.hi)})"
    if isinstance(e, Laplace):
        return f"laplace({format_number(e.scale)})"
    if isinstance(e, TreeAggregate):
        return (f"tree({e.stream}, over: {_window(e.window)}, using: {e.func}, "
                f"sensitivity: {format_number(e.sensitivity)}, epsilon: {format_number(e.epsilon)}, "
                f"budget: {e.budget})")
    if isinstance(e, Tuple):
        return "(" + ", ".join(e.members) + ")"
    raise TypeError(f"cannot render {e!r}")


def render_specification(spec: Specification) -> str:
    lines = []
    if spec.group_size != 1:
        lines.append(f"#![group_size = {spec.group_size}]")
    for d in spec.inputs:
        line = f"input {d.name} : {d.type}"
        if d.bounded:
            line += f" range [{format_number(d.lo)}, {format_number(d.hi)}]"
        lines.append(line)
    for d in spec.outputs:
        if d.public:
            lines.append("#[public]")
        pacing = f" {render_pacing(d.pacing, spec.input_names)}" if d.pacing is not None else ""
        lines.append(f"output {d.name}{pacing} := {render_expr(d.expr)}")
    return "\n".join(lines) + "\n"
