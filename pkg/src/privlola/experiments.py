"""Variance study, bus-line case study and their synthetic trace generators."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .privacy import DEEP, INPUT_ONLY, compile_specification
from .runtime import Monitor
from .semantics import Trace, make_trace
from .speclang import parse_specification
from .speclang.ast import Specification

METHODS = ("input-only", "regular", "tree")


# ------------------------------------------------------------ variance
def variance_spec(window: int) -> Specification:
    """Rating pipeline with a ``window``-second sum released every second."""
    return parse_specification(
        "input score : Int64 range [1, 6]\n"
        "input conf : Int64 range [-1, 1]\n"
        "output adj := (6 - score) * 3 + conf + 1\n"
        "#[public]\n"
        f"output davg @1s := adj.aggregate(over: {window}s, using: sum)\n"
    )


def variance_trace(spec: Specification, vpb: int, buckets: int, seed: int) -> Trace:
    """``vpb`` evenly spaced rating events inside each one-second bucket."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(buckets):
        scores = rng.integers(1, 7, size=vpb)
        confs = rng.integers(-1, 2, size=vpb)
        for j in range(vpb):
            rows.append((k + Fraction(j + 1, vpb + 1), {"score": int(scores[j]), "conf": int(confs[j])}))
    return make_trace(spec, rows)


def _compile_method(spec: Specification, method: str, epsilon, tree_budget: Optional[str]):
    if method == "input-only":
        return compile_specification(spec, epsilon, INPUT_ONLY)
    if method == "regular":
        return compile_specification(spec, epsilon, DEEP)
    return compile_specification(spec, epsilon, DEEP, tree=True, tree_budget=tree_budget)


def analytic_regular_variance(window: int, epsilon=1) -> float:
    """Variance of one plain-Laplace release of the variance spec."""
    scale = Fraction(window) * 17 / Fraction(epsilon)
    return float(2 * scale * scale)


@dataclass(frozen=True)
class VarianceCell:
    method: str
    window: int
    vpb: int
    variance: float


def _variance_cell(args) -> VarianceCell:
    method, window, vpb, runs, epsilon, buckets, seed, tree_budget = args
    spec = variance_spec(window)
    compiled = _compile_method(spec, method, epsilon, tree_budget)
    trace = variance_trace(spec, vpb, buckets, seed)
    mon = Monitor(compiled.spec, trace, horizon=buckets)
    samples = np.array([mon.run(seed=seed * 1_000_003 + r).values("davg") for r in range(runs)])
    per_time = samples.var(axis=0, ddof=1)
    return VarianceCell(method, window, vpb, float(per_time.mean()))


def run_variance(windows: Sequence[int] = tuple(range(1, 16)), vpbs: Sequence[int] = (1, 10, 100),
                 runs: int = 200, epsilon=1, buckets: int = 20, seed: int = 7,
                 methods: Sequence[str] = METHODS, workers: int = 1,
                 tree_budget: Optional[str] = None) -> list[VarianceCell]:
    if runs < 2:
        raise ValueError("variance needs at least two runs")
    jobs = [(m, w, v, runs, epsilon, buckets, seed, tree_budget) for v in vpbs for w in windows for m in methods]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_variance_cell, jobs))
    return [_variance_cell(j) for j in jobs]


def variance_csv(cells: Iterable[VarianceCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "window", "vpb", "variance"])
    for c in cells:
        w.writerow([c.method, c.window, c.vpb, f"{c.variance:.6g}"])
    return buf.getvalue()


def variance_table(cells: Iterable[VarianceCell]) -> str:
    """Wide table: one row per window, one column per (method, vpb)."""
    cells = list(cells)
    keys = sorted({(c.method, c.vpb) for c in cells}, key=lambda k: (k[1], METHODS.index(k[0])))
    lookup = {(c.method, c.vpb, c.window): c.variance for c in cells}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window"] + [f"{m}@{v}" for m, v in keys])
    for win in sorted({c.window for c in cells}):
        w.writerow([win] + [f"{lookup[(m, v, win)]:.6g}" for m, v in keys])
    return buf.getvalue()


# ---------------------------------------------------------- case study
LINES = ("uni", "city", "night")


def line_rate(line: str, hour: int) -> float:
    """Expected reports per hour for ``line`` at hour of day ``hour``."""
    if line == "uni":
        return 80.0 if 7 <= hour < 18 else 0.0
    if line == "city":
        if not 6 <= hour < 22:
            return 0.0
        return 75.0 if 11 <= hour < 14 else 50.0
    return 10.0 if hour >= 22 or hour < 5 else 0.0


def line_profile(line: str, hour: int) -> float:
    """Mean crowdedness for ``line`` at ``hour``."""
    if line == "uni":
        return 7.5 if hour in (7, 8, 16, 17) else 5.5
    if line == "city":
        return 6.0 if 11 <= hour < 14 else 4.0
    return 6.5


def casestudy_spec() -> Specification:
    parts = ["input uni : Float64 range [1, 10]",
             "input city : Float64 range [1, 10]",
             "input night : Float64 range [1, 10]"]
    for line in LINES:
        parts += [
            f"output count_{line} @1h := {line}.aggregate(over: 1h, using: count)",
            f"output avg_{line} @1h := {line}.aggregate(over: 1h, using: avg).defaults(to: 0)",
            "#[public]",
            f"output crowd_{line} @1h := clamp(avg_{line}.hold().defaults(to: 0), 0, 10)",
            "#[public]",
            f"output busy_{line} @1h := if count_{line}.hold().defaults(to: 0) > 5 then 1 else 0",
        ]
    return parse_specification("\n".join(parts) + "\n")


def generate_casestudy_trace(seed: int = 1, days: int = 1) -> Trace:
    """Poisson hourly report counts per line; values in [1, 10] with one decimal."""
    if days < 1:
        raise ValueError("days must be at least 1")
    rng = np.random.default_rng(seed)
    events: dict[int, dict[str, float]] = {}
    for day in range(days):
        for hour in range(24):
            base = (day * 24 + hour) * 3_600_000
            for line in LINES:
                n = int(rng.poisson(line_rate(line, hour)))
                stamps = rng.integers(1, 3_600_001, size=n)
                values = np.clip(rng.normal(line_profile(line, hour), 1.5, size=n), 1, 10)
                for ms, v in zip(stamps, values):
                    slot = events.setdefault(base + int(ms), {})
                    slot.setdefault(line, round(float(v), 1))
    rows = [(Fraction(ms, 1000), events[ms]) for ms in sorted(events)]
    return make_trace(casestudy_spec(), rows)


@dataclass
class LineHour:
    line: str
    hour: int  # hours since the start of the trace
    count: int
    truth: Optional[float]
    released: list = field(default_factory=list)

    @property
    def mean(self) -> Optional[float]:
        return float(np.mean(self.released)) if self.released else None

    @property
    def sd(self) -> Optional[float]:
        return float(np.std(self.released, ddof=1)) if len(self.released) > 1 else None


def ground_truth(trace: Trace, days: int) -> dict:
    sums = {}
    for rec in trace.records:
        hour = math.ceil(rec.time / 3600) - 1
        for line, v in rec.values.items():
            s, c = sums.get((line, hour), (0.0, 0))
            sums[(line, hour)] = (s + v, c + 1)
    return sums


def run_casestudy(runs: int = 200, seed: int = 1, days: int = 1, epsilon=1, heuristic: str = DEEP,
                  tree: bool = True, trace: Optional[Trace] = None) -> list[LineHour]:
    """Release statistics of every line for every hour of the trace.

    A line's average for hour ``h`` is released at the end of the hour when
    its busy flag is set.
    """
    spec = casestudy_spec()
    trace = trace if trace is not None else generate_casestudy_trace(seed, days)
    compiled = compile_specification(spec, epsilon, heuristic, tree=tree)
    horizon = 24 * 3600 * days
    mon = Monitor(compiled.spec, trace, horizon=horizon)
    truth = ground_truth(trace, days)
    cells = {}
    for line in LINES:
        for hour in range(24 * days):
            s, c = truth.get((line, hour), (0.0, 0))
            cells[(line, hour)] = LineHour(line, hour, c, s / c if c else None)
    for r in range(runs):
        model = mon.run(seed=seed * 1_000_003 + r)
        for line in LINES:
            crowd = model.streams[f"crowd_{line}"]
            busy = model.streams[f"busy_{line}"]
            for (t, v), (_, gate) in zip(crowd, busy):
                hour = int(mon.pm.times[t] // 3600) - 1
                if hour >= 0 and gate == 1.0:
                    cells[(line, hour)].released.append(v)
    return [cells[(line, h)] for line in LINES for h in range(24 * days)]


def casestudy_csv(cells: Iterable[LineHour]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["line", "hour", "events", "releases", "mean", "sd", "truth"])
    fmt = lambda x: "" if x is None else f"{x:.4f}"  # noqa: E731
    for c in cells:
        w.writerow([c.line, c.hour, c.count, len(c.released), fmt(c.mean), fmt(c.sd), fmt(c.truth)])
    return buf.getvalue()


def casestudy_summary(cells: Sequence[LineHour]) -> dict:
    """Fractions backing the two case-study claims."""
    by = {(c.line, c.hour): c for c in cells}
    night = [c for c in cells if c.line == "night" and c.sd is not None]
    uni = [c for c in cells if c.line == "uni" and c.sd is not None]
    pairs = [(n, u) for n in night for u in uni]
    sd_wins = sum(1 for n, u in pairs if n.sd > u.sd)
    day = [c for c in cells if c.line in ("uni", "city") and c.sd is not None and 7 <= c.hour % 24 < 18]
    close = sum(1 for c in day if abs(c.mean - c.truth) <= 3 * c.sd)
    silent_ok = all(not by[(c.line, c.hour)].released for c in cells if c.count <= 5)
    return {
        "sd_pairs": len(pairs),
        "sd_night_exceeds_uni": sd_wins / len(pairs) if pairs else float("nan"),
        "daytime_hours": len(day),
        "daytime_within_3sd": close / len(day) if day else float("nan"),
        "no_release_when_count_le_5": silent_ok,
    }
