import io
import random
from fractions import Fraction

import pytest

from helpers import feedback_spec, random_spec, random_trace
from privlola.errors import IllegalCycle, MissingDefault, PacingMismatch, SpecError, WindowInEventBased
from privlola.semantics import (
    PacingModel,
    build_dependency_graph,
    check_pacing_types,
    check_specification,
    derive_pacing_model,
    holdn,
    last_event,
    make_trace,
    read_trace_csv,
    to_dot,
    window_multiplier,
    window_times,
    write_trace_csv,
)
from privlola.speclang import parse_specification
from privlola.speclang.ast import EventBased, Periodic

DAY = 86400


def _pm(fires: dict, times=None) -> PacingModel:
    n = 1 + max(max(v) for v in fires.values())
    times = times or tuple(Fraction(i) for i in range(n))
    return PacingModel(times, {k: tuple(v) for k, v in fires.items()})


def test_feedback_graph_edges():
    g = build_dependency_graph(feedback_spec())
    value_nodes = {"score", "conf", "adj", "davg", "low", "high"}
    assert value_nodes <= set(g.nodes)
    labels = {(e.src, e.dst, e.label) for e in g.edges if e.src != "range"}
    assert labels == {
        ("adj", "score", "0"), ("adj", "conf", "0"), ("davg", "adj", "3d"),
        ("low", "davg", "0"), ("low", "low", "-1"), ("high", "davg", "0"), ("high", "high", "-1"),
    }


def test_constant_graph():
    g = build_dependency_graph(parse_specification("output x := 1"))
    assert list(g.nodes) == ["x"] and g.edges == ()


def test_sync_cycle_is_illegal():
    with pytest.raises(IllegalCycle):
        build_dependency_graph(parse_specification("output a := b\noutput b := a"))


def test_offset_cycle_is_legal():
    spec = parse_specification("output a := a.offset(by: -1).defaults(to: 0) + 1")
    assert build_dependency_graph(spec).deps("a")[0].kind == "offset"


def test_feedback_pacing():
    pacing = check_pacing_types(feedback_spec())
    assert pacing["adj"] == EventBased(frozenset({"score", "conf"}))
    for name in ("davg", "low", "high"):
        assert pacing[name] == Periodic(Fraction(DAY))


def test_periodic_sync_of_input_mismatch():
    with pytest.raises(PacingMismatch):
        check_pacing_types(parse_specification("input x : Int64 range [0, 1]\noutput y @1d := x"))


def test_window_in_event_based():
    with pytest.raises(WindowInEventBased):
        check_pacing_types(parse_specification(
            "input x : Int64 range [0, 1]\noutput y := x.aggregate(over: 3s, using: sum)"))


def test_period_divisibility():
    base = "input x : Int64 range [0, 1]\noutput p @2s := x.aggregate(over: 2s, using: sum)\n"
    check_pacing_types(parse_specification(base + "output q @4s := p"))
    with pytest.raises(PacingMismatch):
        check_pacing_types(parse_specification(base + "output q @3s := p"))


def test_missing_default():
    with pytest.raises(MissingDefault):
        check_specification(parse_specification("input x : Int64 range [0, 1]\noutput y := x.offset(by: -1)"))


def test_pacing_model_example():
    spec = feedback_spec()
    trace = make_trace(spec, [(Fraction(1, 2), {"score": 1, "conf": 0}), (Fraction(17, 10), {"score": 2, "conf": 1})])
    pm = derive_pacing_model(spec, check_pacing_types(spec), trace, 3 * DAY)
    assert [pm.times[t] for t in pm.fires["davg"]] == [0, DAY, 2 * DAY, 3 * DAY]
    assert [pm.times[t] for t in pm.fires["adj"]] == [Fraction(1, 2), Fraction(17, 10)]


def test_empty_trace_horizon_zero():
    spec = feedback_spec()
    pm = derive_pacing_model(spec, check_pacing_types(spec), make_trace(spec, []), 0)
    assert pm.fires["davg"] == (0,) and pm.fires["adj"] == ()


def test_partial_record_does_not_fire_adj():
    spec = feedback_spec()
    trace = make_trace(spec, [(1, {"score": 3})])
    pm = derive_pacing_model(spec, check_pacing_types(spec), trace, 1)
    assert pm.fires["adj"] == () and len(pm.fires["score"]) == 1


def test_last_event_examples():
    pm = _pm({"y": [1, 3, 5], "x": [0, 1, 2, 3, 4, 5, 6]})
    assert last_event(pm, "y", 6, 1) == 5
    assert last_event(pm, "y", 1, 1) is None
    assert last_event(pm, "y", 3, 0) == 3
    assert last_event(pm, "y", 5, 2) == 1


def test_window_times_examples():
    pm = _pm({"y": [0, 1, 2, 3]})
    assert window_times(pm, "y", 3, Fraction(3)) == [1, 2, 3]
    assert window_times(pm, "y", 3, Fraction(3), closed=True) == [0, 1, 2, 3]
    assert window_times(pm, "y", 3, Fraction(1, 2)) == [3]
    assert window_times(pm, "y", 3, Fraction(10)) == [0, 1, 2, 3]
    assert window_times(pm, "y", 3, None) == [0, 1, 2, 3]


def test_holdn():
    pm = _pm({"y": [1], "x": [0, 1, 2, 3]})
    assert [holdn(pm, "x", "y", t) for t in range(4)] == [0, 1, 2, 3]


def test_window_multiplier():
    assert window_multiplier(Fraction(3 * DAY), Fraction(DAY)) == 3
    assert window_multiplier(Fraction(3 * DAY), Fraction(DAY), closed=True) == 4
    assert window_multiplier(Fraction(5, 2), Fraction(1)) == 3


def test_trace_clamps_and_orders():
    spec = feedback_spec()
    trace = make_trace(spec, [(0, {"score": 9, "conf": -4})])
    assert trace.records[0].values == {"score": 6.0, "conf": -1.0} and trace.clamped == 2
    with pytest.raises(SpecError):
        make_trace(spec, [(1, {"score": 1}), (1, {"score": 2})])
    with pytest.raises(SpecError):
        make_trace(spec, [(0, {"nope": 1})])


def test_trace_csv_roundtrip():
    spec = feedback_spec()
    trace = make_trace(spec, [(Fraction(1, 3), {"score": 2}), (Fraction(5, 2), {"score": 4, "conf": -1})])
    text = write_trace_csv(trace, spec.input_names)
    assert text.splitlines()[0] == "time,score,conf"
    assert read_trace_csv(spec, io.StringIO(text)) == trace


def test_dot_export_labels():
    spec = feedback_spec()
    dot = to_dot(build_dependency_graph(spec), {"davg": 51})
    assert '"davg" -> "adj" [label="3d"]' in dot
    assert "51" in dot and "-1" in dot


@pytest.mark.parametrize("seed", range(40))
def test_pacing_model_invariants(seed):
    rng = random.Random(seed)
    spec = random_spec(rng)
    typed = check_specification(spec)
    trace = random_trace(rng, spec)
    pm = derive_pacing_model(spec, typed.pacing, trace, trace.end + 3)
    for e in typed.graph.edges:
        if e.kind in ("sync", "offset"):
            assert set(pm.fires[e.src]) <= set(pm.fires[e.dst])
    for name, p in typed.pacing.items():
        if isinstance(p, Periodic):
            rts = [pm.times[t] for t in pm.fires[name]]
            assert all(b - a == p.period for a, b in zip(rts, rts[1:]))
        ts = pm.fires[name]
        for a, b in zip(ts, ts[1:]):
            assert last_event(pm, name, b, 1) == a
    for e in typed.graph.edges:
        if e.kind == "window" and e.window is not None and isinstance(typed.pacing[e.dst], Periodic):
            for t in pm.fires[e.src]:
                bound = window_multiplier(e.window, typed.pacing[e.dst].period)
                assert len(window_times(pm, e.dst, t, e.window)) <= bound
