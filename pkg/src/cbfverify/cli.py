"""Command-line front end: extract, verify, falsify, report.

Exit codes: 0 success (Unknown boxes included), 1 usage error, 2 input error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .dynamics import load_scenario
from .exceptions import (DomainError, NonDifferentiableError, NumericError, SchemaError,
                         SpecificationError)
from .falsifier import DEFAULT_BUDGET, base_seed, falsify_all
from .network import load_model
from .report import comparison_table, parse_slices, render_figure, verdict_table
from .verifier import BoundarySet, Mode, VerificationConfig, extract_boundary, verify_all

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc


def _write_text(path, text: str) -> None:
    """Write via a temporary file so a failed run leaves no partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, doc: dict) -> None:
    _write_text(path, json.dumps(doc, indent=1) + "\n")


def _input_record(path) -> dict:
    return {"path": str(path), "sha256": _sha256(path)}


def _load_boundary(path, net, force: bool) -> BoundarySet:
    try:
        boundary = BoundarySet.from_dict(_read_json(path))
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if boundary.model_hash and boundary.model_hash != net.fingerprint() and not force:
        raise SpecificationError(
            f"{path}: boundary was extracted for a different model "
            f"({boundary.model_hash[:12]} vs {net.fingerprint()[:12]}); pass --force to override")
    return boundary


def _grids(text: str):
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grids must be an integer or comma list, got {text!r}")
    return values[0] if len(values) == 1 else values


def cmd_extract(args) -> int:
    scenario = load_scenario(args.scenario)
    net = load_model(args.model)
    boundary = extract_boundary(net, scenario.state_box, args.grids)
    doc = boundary.to_dict()
    doc["manifest"] = {"tool": "cbfverify", "version": __version__,
                       "model": _input_record(args.model),
                       "scenario": dict(_input_record(args.scenario), **scenario.to_dict())}
    _write_json(args.out, doc)
    print(f"K={len(boundary)}")
    if len(boundary) == 0:
        print("warning: no grid cell straddles the zero level set; boundary is empty",
              file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    started = _now()
    scenario = load_scenario(args.scenario)
    net = load_model(args.model)
    boundary = _load_boundary(args.boundary, net, args.force)
    if boundary.domain.dims != scenario.model.state_dim:
        raise SpecificationError(
            f"{args.boundary}: boundary is {boundary.domain.dims}-D, "
            f"{scenario.model.name} state is {scenario.model.state_dim}-D")
    config = VerificationConfig(alpha=args.alpha, mode=Mode(args.mode),
                                max_splits=args.max_splits,
                                grids_per_dim=int(boundary.grid_spec[0]) if boundary.grid_spec else 20,
                                record=args.dump_conditions)
    summary = verify_all(net, scenario.model, boundary, config,
                         control_box=scenario.control_box, jobs=args.jobs)
    boxes = []
    for box, verdict in zip(summary.boxes, summary.verdicts):
        entry = verdict.to_dict(box, conditions=args.dump_conditions)
        boxes.append(entry)
    doc = {
        "manifest": {"tool": "cbfverify", "version": __version__,
                     "model": _input_record(args.model),
                     "scenario": dict(_input_record(args.scenario), **scenario.to_dict()),
                     "boundary": _input_record(args.boundary),
                     "model_hash": net.fingerprint(),
                     "timestamps": {"started": started, "finished": _now()}},
        "config": config.to_dict(),
        "K": summary.K,
        "boxes": boxes,
        "verified_rate": summary.verified_rate,
        "timing": {"total_seconds": summary.total_time, "per_box_seconds": summary.box_times,
                   "jobs": args.jobs},
    }
    _write_json(args.out, doc)
    if summary.vacuous:
        print("warning: empty boundary (K=0); verified rate is vacuous", file=sys.stderr)
    print(f"verified {summary.n_verified}/{summary.K} boxes, rate {summary.verified_rate:.4f}, "
          f"{summary.total_time:.2f} s")
    return EXIT_OK


def cmd_falsify(args) -> int:
    scenario = load_scenario(args.scenario)
    net = load_model(args.model)
    boundary = _load_boundary(args.boundary, net, args.force)
    seed = base_seed()
    start = time.perf_counter()
    found = falsify_all(net, scenario.model, boundary, args.alpha, args.budget,
                        control_box=scenario.control_box, seed=seed)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    doc = _read_json(out) if out.exists() else {}
    if doc and len(doc.get("boxes", [])) not in (0, len(boundary)):
        raise SpecificationError(
            f"{out}: holds {len(doc['boxes'])} boxes but the boundary has {len(boundary)}")
    cex = [c.to_dict() for c in found if c is not None]
    conflicts = [c["box_index"] for c in cex
                 if doc.get("boxes") and doc["boxes"][c["box_index"]]["status"] == "verified"]
    doc["counterexamples"] = cex
    doc["falsification"] = {"alpha": args.alpha, "budget": args.budget, "seed": seed,
                            "refinement": "coordinate_ascent",
                            "rate": (1.0 if len(boundary) == 0
                                     else 1.0 - len(cex) / len(boundary)),
                            "boundary": _input_record(args.boundary)}
    doc.setdefault("timing", {})["falsify_seconds"] = elapsed
    _write_json(out, doc)
    print(f"counterexamples in {len(cex)}/{len(boundary)} boxes, "
          f"falsification rate {doc['falsification']['rate']:.4f}")
    if conflicts:
        print(f"error: counterexamples inside verified boxes {conflicts}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_report(args) -> int:
    docs = [_read_json(p) for p in args.results]
    if args.format == "csv":
        if len(docs) == 1:
            text = verdict_table(docs[0])
        else:
            text = comparison_table(docs, [str(p) for p in args.results])
        if args.out:
            _write_text(args.out, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if len(docs) != 1:
        raise UsageError("figure format takes exactly one results file")
    if not args.out:
        raise UsageError("figure format needs --out")
    doc = docs[0]
    scenario = doc.get("manifest", {}).get("scenario", {})
    from .dynamics import BUILTIN_MODELS
    cls = BUILTIN_MODELS.get(scenario.get("model"))
    names = cls.state_names if cls is not None else ()
    n = len(doc["boxes"][0]["box"]["lower"]) if doc.get("boxes") else len(names)
    slices = parse_slices(args.slice, names, n)
    count = render_figure(doc, slices, args.out, scenario.get("obstacle"), names)
    print(f"drew {count} boxes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbfverify", description="Verify ReLU neural control barrier functions.")
    parser.add_argument("--version", action="version", version=f"cbfverify {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract boundary boxes from a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--grids", type=_grids, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("verify", help="verify the boundary condition on every box")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SYMBOLIC.value)
    p.add_argument("--max-splits", type=int, default=1000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump-conditions", action="store_true")
    p.add_argument("--force", action="store_true", help="accept a boundary from another model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("falsify", help="search for counterexamples by sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_falsify)

    p = sub.add_parser("report", help="tables and figures from results documents")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--format", choices=["csv", "figure"], default="csv")
    p.add_argument("--slice", action="append", default=[], metavar="DIM=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if getattr(args, "budget", 1) < 1:
        parser.error("--budget must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cbfverify: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"cbfverify: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SchemaError, SpecificationError, DomainError) as exc:
        print(f"cbfverify: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, NonDifferentiableError, FloatingPointError) as exc:
        print(f"cbfverify: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
