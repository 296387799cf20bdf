"""Command-line interface: ``privlola <command> ...``.

Exit status is 0 on success, 1 for user errors (bad specification, trace or
flags) and 2 for internal failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import SpecError
from .experiments import (
    analytic_regular_variance,
    casestudy_csv,
    casestudy_spec,
    casestudy_summary,
    generate_casestudy_trace,
    run_casestudy,
    run_variance,
    variance_csv,
    variance_spec,
    variance_table,
    variance_trace,
)
from .privacy import HEURISTICS, compile_specification, select_barriers, validate_barriers
from .runtime import Monitor
from .semantics import read_trace_csv, to_dot, write_trace_csv
from .sensitivity import analyze, json_number
from .speclang import parse_specification, render_specification
from .speclang.ast import Specification

log = logging.getLogger("privlola")

_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


class UsageError(Exception):
    pass


def parse_time(text: str) -> Fraction:
    text = text.strip()
    if text and text[-1] in _UNITS:
        return Fraction(text[:-1]) * _UNITS[text[-1]]
    return Fraction(text)


def parse_int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip("-"):
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def parse_weights(text: Optional[str]) -> Optional[dict]:
    if not text:
        return None
    weights = {}
    for item in text.split(","):
        name, _, value = item.partition("=")
        if not value:
            raise UsageError(f"budget weight {item!r} is not name=value")
        weights[name.strip()] = Fraction(value)
    return weights


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def load_spec(path: str, allow_compiled: bool = False, group_size: Optional[int] = None) -> Specification:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        spec = parse_specification(text, allow_compiled=allow_compiled)
    except SpecError as exc:
        exc.args = (f"{path}:{exc}",)
        raise
    if group_size is not None:
        if group_size < 1:
            raise UsageError("--w must be a positive integer")
        spec = Specification(spec.inputs, spec.outputs, group_size)
    return spec


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands
def cmd_analyze(args) -> int:
    spec = load_spec(args.spec, group_size=args.w)
    start = time.perf_counter()
    report = analyze(spec, args.closed_windows)
    plans = {h: select_barriers(report, h, args.epsilon) for h in HEURISTICS}
    elapsed = time.perf_counter() - start
    for h, plan in plans.items():
        if not validate_barriers(report.graph, plan.barriers):
            raise RuntimeError(f"{h} plan failed validation")
    out = Path(args.out)
    _write(out / "report.json", report.dumps() + "\n")
    bounds = {n: json_number(i.bound) for n, i in report.streams.items()}
    _write(out / "graph.dot", to_dot(report.graph, bounds, report.segments()))
    _write(out / "plans.json", json.dumps({h: p.to_json() for h, p in plans.items()}, indent=2) + "\n")
    width = max(len(n) for n in report.streams)
    for n, info in report.streams.items():
        print(f"{n:<{width}}  bound={json_number(info.bound)!s:<6} influence={json_number(info.influence)!s:<4} "
              f"{info.segment}")
    for h, plan in plans.items():
        print(f"{h}: {{{', '.join(plan.barriers)}}}")
    print(f"analysis time: {elapsed * 1000:.1f} ms")
    return 0


def cmd_compile(args) -> int:
    spec = load_spec(args.spec, group_size=args.w)
    budget = "renormalized" if args.renormalize_tree_budget else args.tree_budget
    compiled = compile_specification(spec, args.epsilon, args.heuristic, args.tree_aggregation,
                                     parse_weights(args.budget_weights), args.closed_windows, budget)
    text = render_specification(compiled.spec)
    sidecar = compiled.sidecar_json()
    if args.output:
        out = Path(args.output)
        _write(out, text)
        _write(Path(args.sidecar) if args.sidecar else out.with_suffix(out.suffix + ".json"), sidecar)
    else:
        sys.stdout.write(text)
        if args.sidecar:
            _write(Path(args.sidecar), sidecar)
    return 0


def cmd_run(args) -> int:
    spec = load_spec(args.spec, allow_compiled=True)
    try:
        trace = read_trace_csv(spec, args.trace)
    except OSError as exc:
        raise UsageError(f"cannot read {args.trace}: {exc.strerror}") from exc
    horizon = parse_time(args.horizon) if args.horizon else None
    model = Monitor(spec, trace, horizon, args.closed_windows).run(args.seed, noise=not args.no_noise)
    only = spec.public if args.emit in ("private-only", "public-only") else None
    text = model.to_jsonl(only)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    if trace.clamped:
        print(f"warning: clamped {trace.clamped} out-of-range input values", file=sys.stderr)
    return 0


def cmd_variance(args) -> int:
    start = time.perf_counter()
    cells = run_variance(parse_int_list(args.windows), parse_int_list(args.vpb), args.runs, args.epsilon,
                         args.buckets, args.seed, workers=args.workers, tree_budget=args.tree_budget)
    out = Path(args.out)
    _write(out / "variance.csv", variance_csv(cells))
    _write(out / "variance_table.csv", variance_table(cells))
    sys.stdout.write(variance_table(cells))
    for c in cells:
        if c.method == "regular":
            ratio = c.variance / analytic_regular_variance(c.window, args.epsilon)
            log.info("regular w=%d vpb=%d empirical/analytic=%.3f", c.window, c.vpb, ratio)
    print(f"elapsed: {time.perf_counter() - start:.1f} s")
    return 0


def cmd_casestudy(args) -> int:
    start = time.perf_counter()
    cells = run_casestudy(args.runs, args.seed, args.days, args.epsilon, args.heuristic, args.tree_aggregation)
    out = Path(args.out)
    _write(out / "casestudy.csv", casestudy_csv(cells))
    summary = casestudy_summary(cells)
    _write(out / "casestudy_summary.json", json.dumps(summary, indent=2) + "\n")
    for key, value in summary.items():
        print(f"{key}: {value}")
    print(f"elapsed: {time.perf_counter() - start:.1f} s")
    return 0


def cmd_gen_trace(args) -> int:
    if args.kind == "casestudy":
        spec = casestudy_spec()
        trace = generate_casestudy_trace(args.seed, args.days)
    else:
        spec = variance_spec(1)
        trace = variance_trace(spec, args.vpb, args.buckets, args.seed)
    text = write_trace_csv(trace, spec.input_names)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privlola", description="Differentially private stream monitoring.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--w", type=int, default=None, help="group size (overrides the spec pragma)")
        sp.add_argument("--closed-windows", action="store_true", help="use closed window intervals")
        sp.add_argument("--epsilon", type=Fraction, default=Fraction(1))

    a = sub.add_parser("analyze", help="sensitivity report, DOT graph and barrier plans")
    a.add_argument("spec")
    a.add_argument("--out", default=".", help="directory for report.json, graph.dot, plans.json")
    common(a)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compile", help="inject noise and emit the transformed spec plus a JSON sidecar")
    c.add_argument("spec")
    c.add_argument("--heuristic", choices=HEURISTICS, default="deep")
    c.add_argument("--tree-aggregation", type=_on_off, default=False, metavar="on|off")
    c.add_argument("--budget-weights", default=None, metavar="name=w,...")
    c.add_argument("--tree-budget", choices=("uniform", "geometric", "renormalized"), default=None,
                   help="level budgets of sliding-window trees (default uniform)")
    c.add_argument("--renormalize-tree-budget", action="store_true",
                   help="shorthand for --tree-budget renormalized")
    c.add_argument("-o", "--output", default=None)
    c.add_argument("--sidecar", default=None)
    common(c)
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="evaluate a (compiled) spec over a CSV trace, emit JSONL")
    r.add_argument("spec")
    r.add_argument("trace")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--horizon", default=None, help="seconds or duration such as 3d")
    r.add_argument("--emit", choices=("all", "private-only", "public-only"), default="all",
                   help="private-only/public-only restrict the output to public streams")
    r.add_argument("--no-noise", action="store_true", help="evaluate with every noise term set to 0")
    r.add_argument("--closed-windows", action="store_true")
    r.add_argument("-o", "--output", default=None)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="variance study or case study")
    esub = e.add_subparsers(dest="experiment", required=True)
    v = esub.add_parser("variance")
    v.add_argument("--runs", type=int, default=200)
    v.add_argument("--epsilon", type=Fraction, default=Fraction(1))
    v.add_argument("--windows", default="1-15")
    v.add_argument("--vpb", default="1,10,100", help="values per bucket")
    v.add_argument("--buckets", type=int, default=20)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--workers", type=int, default=1, help="worker processes")
    v.add_argument("--tree-budget", choices=("uniform", "geometric", "renormalized"), default=None)
    v.add_argument("--out", default="variance-out")
    v.set_defaults(func=cmd_variance)
    cs = esub.add_parser("casestudy")
    cs.add_argument("--runs", type=int, default=200)
    cs.add_argument("--epsilon", type=Fraction, default=Fraction(1))
    cs.add_argument("--seed", type=int, default=1)
    cs.add_argument("--days", type=int, default=1)
    cs.add_argument("--heuristic", choices=HEURISTICS, default="deep")
    cs.add_argument("--tree-aggregation", type=_on_off, default=True, metavar="on|off")
    cs.add_argument("--out", default="casestudy-out")
    cs.set_defaults(func=cmd_casestudy)

    g = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    g.add_argument("kind", choices=("casestudy", "variance"))
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--days", type=int, default=1)
    g.add_argument("--vpb", type=int, default=1)
    g.add_argument("--buckets", type=int, default=20)
    g.add_argument("-o", "--output", default=None)
    g.set_defaults(func=cmd_gen_trace)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, UsageError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - exercised via exit code tests
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
