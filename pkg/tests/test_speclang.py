from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from helpers import feedback_spec
from privlola.errors import DuplicateStream, InvalidOffset, SpecError, SpecSyntaxError, UnknownReference
from privlola.speclang import parse_specification, render_specification, tokenize
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

INPUTS = ("a", "b", "c")


def test_feedback_structure():
    spec = feedback_spec()
    assert spec.input_names == ("score", "conf")
    assert spec.output_names == ("adj", "davg", "low", "high", "range")
    assert spec.public == {"low", "high"}
    assert spec.decl("score").lo == 1 and spec.decl("score").hi == 6
    assert spec.output("davg").pacing == Periodic(Fraction(86400))


def test_both_pacing_spellings():
    a = parse_specification("input x : Int64 range [0, 1]\n#[public]\noutput y @1d@ := x.hold().defaults(to: 0)\n")
    b = parse_specification("input x : Int64 range [0, 1]\n#[public]\noutput y @1d := x.hold().defaults(to: 0)\n")
    assert a == b


def test_constant_only_spec():
    spec = parse_specification("output x := 1")
    assert spec.inputs == () and spec.outputs == (OutputDecl("x", Const(Fraction(1))),)


def test_offset_zero_rejected():
    with pytest.raises(InvalidOffset):
        parse_specification("input x : Int64 range [0, 1]\noutput y := x.offset(by: 0)")


@pytest.mark.parametrize("text, exc", [
    ("input x : Int64\ninput x : Int64", DuplicateStream),
    ("output y := z", UnknownReference),
    ("output y := laplace(3)", SpecSyntaxError),
    ("input x : Int64 range [3, 1]", SpecSyntaxError),
    ("output y := 1 +", SpecSyntaxError),
])
def test_rejections(text, exc):
    with pytest.raises(exc):
        parse_specification(text)


def test_syntax_error_position():
    with pytest.raises(SpecSyntaxError) as info:
        parse_specification("input x : Int64 range [0, 1]\noutput y := x +\noutput z := 1")
    assert (info.value.line, info.value.column) == (3, 1)
    assert "expected" in str(info.value)


def test_compiled_forms_need_flag():
    text = "input x : Int64 range [0, 1]\n#[public]\noutput y := x + laplace(1/3)\n"
    spec = parse_specification(text, allow_compiled=True)
    assert render_specification(spec) == text


def test_render_feedback_roundtrip():
    spec = feedback_spec()
    assert parse_specification(render_specification(spec)) == spec


def test_render_inputs_only():
    spec = Specification((InputDecl("x", "Int64", Fraction(0), Fraction(3)),))
    assert render_specification(spec) == "input x : Int64 range [0, 3]\n"


def test_comments_ignored():
    assert parse_specification("// hello\noutput x := 1 // trailing\n") == parse_specification("output x := 1")


# ---------------------------------------------------------------- round trip
numbers = st.builds(Fraction, st.integers(-50, 50), st.sampled_from([1, 2, 4, 5, 3]))
durations = st.builds(Fraction, st.integers(1, 200), st.sampled_from([1, 2, 10]))


def exprs(streams):
    names = st.sampled_from(streams)
    leaves = st.one_of(
        st.builds(Const, numbers),
        st.builds(Ref, names),
        st.builds(Offset, names, st.integers(1, 4)),
        st.builds(Hold, names, st.one_of(st.none(), st.integers(1, 9))),
        st.builds(Aggregate, names, st.one_of(st.none(), durations), st.sampled_from(["sum", "avg", "count", "last"])),
    )

    def extend(inner):
        cmp = st.builds(Cmp, st.sampled_from(["<", "<=", "=", ">", ">="]), inner, inner)
        return st.one_of(
            st.builds(BinOp, st.sampled_from(["+", "-", "*", "min", "max"]), inner, inner),
            st.builds(Default, inner, inner),
            st.builds(Ite, cmp, inner, inner),
            st.builds(lambda e, lo, w: Clamp(e, lo, lo + w), inner, numbers, st.integers(0, 5).map(Fraction)),
        )
    return st.recursive(leaves, extend, max_leaves=8)


@st.composite
def specifications(draw):
    n_in = draw(st.integers(0, 3))
    inputs = []
    for name in INPUTS[:n_in]:
        lo = draw(numbers)
        bounded = draw(st.booleans())
        inputs.append(InputDecl(name, draw(st.sampled_from(["Int64", "Float64"])),
                                lo if bounded else None, lo + draw(st.integers(0, 9)) if bounded else None))
    n_out = draw(st.integers(0 if n_in else 1, 3))
    names = [f"o{i}" for i in range(n_out)]
    streams = [d.name for d in inputs] + names
    outputs = []
    for name in names:
        pacing = draw(st.one_of(
            st.none(),
            st.builds(Periodic, durations),
            st.sets(st.sampled_from(INPUTS[:n_in]), min_size=1).map(frozenset).map(EventBased) if n_in else st.none(),
        ))
        outputs.append(OutputDecl(name, draw(exprs(streams)), pacing, draw(st.booleans())))
    return Specification(tuple(inputs), tuple(outputs), draw(st.sampled_from([1, 1, 3])))


@settings(max_examples=200, deadline=None)
@given(specifications())
def test_roundtrip_random_asts(spec):
    text = render_specification(spec)
    assert parse_specification(text) == spec
    assert render_specification(parse_specification(text)) == text


# ---------------------------------------------------------- deletion mutants
def _deletion_outcomes(text):
    toks = tokenize(text)[:-1]
    outcomes = []
    for i in range(len(toks)):
        kept = [j for j in range(len(toks)) if j != i]
        mutated = " ".join(toks[j].text for j in kept)
        try:
            parse_specification(mutated)
        except SpecError as exc:
            if exc.column is None:
                outcomes.append((i, "semantic", None))
                continue
            mt = tokenize(mutated)
            k = next(t.index for t in mt if t.column == exc.column)
            outcomes.append((i, "syntax", (kept[k] if k < len(kept) else len(toks)) - i))
        else:
            outcomes.append((i, "valid", None))
    return toks, outcomes


def test_token_deletion_mutants():
    toks, outcomes = _deletion_outcomes(FEEDBACK)
    syntax = [d for _, kind, d in outcomes if kind == "syntax"]
    # the error never points before the deleted token
    assert all(d >= 0 for d in syntax)
    assert sum(d <= 1 for d in syntax) / len(syntax) >= 0.9
    # mutants that still parse are legitimately different specifications
    valid = [toks[i].text for i, kind, _ in outcomes if kind == "valid"]
    assert set(valid) <= {"-", "6", "@"}
