"""Command-line front end.

Exit codes: 0 verified or success, 1 bad input or usage, 2 criterion failed,
3 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .avi import enumerate_critical_branches
from .chain import prepare_reference
from .exprs import load_problem, problem_to_dict
from .fixtures import FIXTURES, fixture
from .probe import ProbeOptions, sample_aubin_modulus
from .verify import (
    AUBIN_VERIFIED,
    CRITERION_FAILED,
    VerificationReport,
    VerifyOptions,
    solution_map_derivative,
    verify_aubin,
)

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def exit_code(verdict: str) -> int:
    if verdict == AUBIN_VERIFIED:
        return EXIT_OK
    if verdict == CRITERION_FAILED:
        return EXIT_FAILED
    return EXIT_INCONCLUSIVE


# --------------------------------------------------------------------------
# Serialization

def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, float):
        return _float(obj)
    if hasattr(obj, "tolist"):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_from_json(text: str) -> VerificationReport:
    return VerificationReport.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# Text rendering

def _vec(values) -> str:
    return "(" + ", ".join(f"{v:.6g}" for v in values) + ")"


def render_report(report: VerificationReport) -> str:
    lines = [f"problem:       {report.problem}", f"verdict:       {report.verdict}"]
    if report.reason:
        lines.append(f"reason:        {report.reason}")
    lines.append(f"mode:          {report.mode}")
    lines.append(f"reference:     p = {_vec(report.p)}, x = {_vec(report.x)}")
    if report.multiplier is not None:
        lines.append(f"multiplier:    {_vec(report.multiplier)}")
    lines.append(f"nondegenerate: {report.nondegenerate}")
    if report.coverage is not None:
        cov = report.coverage
        lines.append(f"coverage:      {cov['covered']}" + ("" if cov["exact"] else " (not certified)"))
    if report.branches:
        lines.append("critical branches:")
        for i, br in enumerate(report.branches):
            flag = "" if br.get("relint", True) else " [closure]"
            status = br.get("implication", "-")
            if "q" in br:
                desc = f"q = {_vec(br['q'])}: u = {_vec(br['u'])}, xi = {_vec(br['xi'])}"
            else:
                desc = f"{len(br.get('generators', []))} generators"
            lines.append(f"  [{i}] {' x '.join(br['descriptor'])} {br['region']}: {desc}{flag}  -> {status}")
    if report.witness is not None:
        w = report.witness
        lines.append(f"witness:       v* = {_vec(w.v_star)}, {w.aux_kind} = {_vec(w.aux)} (pieces {', '.join(w.pieces)})")
    if report.mordukhovich is not None:
        m = report.mordukhovich
        if m.trivial_only:
            lines.append("classical criterion: only the trivial solution (holds)")
        elif m.trivial_only is None:
            lines.append("classical criterion: undecided")
        else:
            lines.append(f"classical criterion: fails, v* = {_vec(m.witness.v_star)}")
    for q, pieces in report.ds.items():
        us = "; ".join(_vec(pc["points"][0]) if len(pc["points"]) == 1 and not pc["rays"] else f"{pc['descriptor']}" for pc in pieces)
        lines.append(f"DS(q = {q}):    {{{us}}}")
    for note in report.notes:
        lines.append(f"note:          {note}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Subcommands

def _emit(args, payload: dict, text: str) -> None:
    out = dumps(payload) if args.format == "json" else text
    if getattr(args, "out", None):
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)


def cmd_verify(args) -> int:
    spec = load_problem(args.file)
    opts = VerifyOptions(mode=args.mode, compare_mordukhovich=args.compare_mordukhovich, seed=args.seed)
    report = verify_aubin(spec, opts)
    _emit(args, report.to_dict(), render_report(report))
    return exit_code(report.verdict)


def cmd_derivative(args) -> int:
    spec = load_problem(args.file)
    report = verify_aubin(spec, VerifyOptions(seed=args.seed))
    if report.verdict != AUBIN_VERIFIED:
        print(f"error: the derivative formula needs a verified Aubin property; verdict is {report.verdict}", file=sys.stderr)
        return exit_code(report.verdict)
    if len(args.q) != spec.l:
        print(f"error: --q needs {spec.l} value(s), got {len(args.q)}", file=sys.stderr)
        return EXIT_USAGE
    ref = prepare_reference(spec)
    branches = enumerate_critical_branches(ref, seed=args.seed)
    pieces = solution_map_derivative(ref, branches, args.q, report)
    payload = {"problem": spec.name, "q": list(args.q), "DS": [p.to_dict() for p in pieces]}
    lines = [f"DS(p̄, x̄)({', '.join(f'{v:g}' for v in args.q)}):"]
    for pc in pieces:
        if pc.is_point:
            lines.append(f"  u = {_vec(pc.points[0])}   [{' x '.join(pc.descriptor)}]")
        else:
            lines.append(
                f"  conv{[_vec(p) for p in pc.points]} + cone{[_vec(r) for r in pc.rays]}"
                f" + span{[_vec(r) for r in pc.lineality]}   [{' x '.join(pc.descriptor)}]"
            )
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_probe(args) -> int:
    spec = load_problem(args.file)
    opts = ProbeOptions(
        radius=args.radius,
        samples=args.samples,
        seed=args.seed,
        neighborhood=args.neighborhood,
        resolution=args.resolution,
    )
    est = sample_aubin_modulus(spec, opts)
    text = f"kappa_hat: {est.kappa_hat:.6g} over {len(est.pairs)} pairs, {len(est.anomalies)} anomalies"
    for a in est.anomalies:
        text += f"\n  {a['kind']} at p = {_vec(a['p'])}"
    _emit(args, est.to_dict(), text)
    return EXIT_OK


def cmd_examples(args) -> int:
    if args.out:
        target = Path(args.out)
        target.mkdir(parents=True, exist_ok=True)
        for name in FIXTURES:
            path = target / f"{name}.json"
            path.write_text(dumps(problem_to_dict(fixture(name))) + "\n", encoding="utf-8")
            print(path)
    else:
        for name, data in FIXTURES.items():
            print(f"{name}: {len(data['variables'])} variables, cone {data['cone']['type']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aubin", description="Directional check of the Aubin property of a solution map.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--format", choices=("json", "text"), default="text")
        p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", help="write the output to this file")

    p = sub.add_parser("verify", help="run the directional criterion")
    p.add_argument("file")
    p.add_argument("--mode", choices=("iv", "iii"), default="iv")
    p.add_argument("--compare-mordukhovich", action="store_true", help="also evaluate the classical coderivative criterion")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("derivative", help="graphical derivative of S at the reference point")
    p.add_argument("file")
    p.add_argument("--q", type=float, nargs="+", required=True)
    common(p)
    p.set_defaults(func=cmd_derivative)

    p = sub.add_parser("probe", help="empirical Lipschitz modulus by sampling")
    p.add_argument("file")
    p.add_argument("--radius", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--neighborhood", type=float, default=0.2)
    p.add_argument("--resolution", type=int, default=4)
    common(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("examples", help="list built-in problems or write them to a directory")
    p.add_argument("--out", help="directory to write the problem files to")
    p.set_defaults(func=cmd_examples)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        # covers malformed files, infeasible reference points and unsupported cones
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
