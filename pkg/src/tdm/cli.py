"""Command-line front end: ``run``, ``econ`` and ``replay``.

Exit codes: 0 on success, 2 for configuration or argument errors, 3 when an
invariant check or a replay comparison fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from . import __version__, canon, economics
from .errors import ConfigInvalid, DomainError, InvariantViolation, ReplayMismatch
from .ledger import to_fraction
from .protocol import replay
from .scenario import load_config, validate_report
from .sim import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

# econ subcommand -> (calculator, ordered flags with defaults)
_ECON = {
    "liveness": (economics.liveness_budget, [("k", None), ("D", None), ("c", None), ("N", None)]),
    "honest": (economics.honest_ev, [("alpha", None), ("k", None), ("D", None)]),
    "dishonest": (economics.dishonest_ev, [("p", None), ("beta", "1"), ("gamma", "0"), ("alpha", None),
                                           ("k", None), ("ell", "0"), ("D", None)]),
    "threshold": (economics.dishonest_alpha_threshold, [("p", None), ("beta", "1"), ("gamma", "0"),
                                                        ("k", "1"), ("ell", "0")]),
    "contribution": (economics.contribution_ev, [("alpha", None), ("k", None), ("D", None), ("E", None)]),
    "price": (economics.min_data_price, [("E", None), ("supply", None), ("k", None), ("reward", None)]),
    "unit-value": (economics.token_unit_value, [("R", None), ("supply", None)]),
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the master seed")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "out", help="output directory")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdm", description="Tokenized data structure simulator")
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"tdm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    run = sub.add_parser("run", parents=[common], help="run a scenario config")
    run.add_argument("config", type=Path)
    run.add_argument("--workers", type=int, default=1, help="parallel replicate workers")

    econ = sub.add_parser("econ", parents=[common], help="closed-form incentive calculators")
    econ_sub = econ.add_subparsers(dest="theorem", required=True)
    for name, (_, flags) in _ECON.items():
        p = econ_sub.add_parser(name, parents=[common])
        for flag, default in flags:
            p.add_argument(f"--{flag}", default=default, required=default is None)
        p.add_argument("--grid", metavar="PARAM=START:STOP:STEP", help="sweep one parameter (inclusive)")

    rp = sub.add_parser("replay", parents=[common], help="replay an events.log")
    rp.add_argument("events_log", type=Path)
    rp.add_argument("--report", type=Path, help="report.json to compare against "
                    "(default: report.json next to the log, if present)")
    return parser


def _err(msg: str) -> None:
    print(f"tdm: {msg}", file=sys.stderr)


def _resolve_seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TDM_SEED")
    return int(env) if env not in (None, "") else None


# -- run ----------------------------------------------------------------

def cmd_run(args) -> int:
    started = time.monotonic()
    try:
        doc = json.loads(args.config.read_text(encoding="utf-8"))
    except FileNotFoundError:
        _err(f"{args.config}: no such file")
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        _err(f"{args.config}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
        return EXIT_CONFIG
    try:
        cfg = load_config(doc, seed_override=_resolve_seed(args))
    except ConfigInvalid as exc:
        for path, msg in exc.problems:
            _err(f"config error at {path}: {msg}")
        return EXIT_CONFIG
    try:
        report = run_scenario(cfg, workers=args.workers)
        validate_report(report.document)
    except InvariantViolation as exc:
        _err(f"invariant violation: {exc}")
        return EXIT_INVARIANT

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "events.log").write_text("".join(line + "\n" for line in report.events_log), encoding="utf-8")
    manifest = {
        "tool_version": __version__,
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "outputs": {"report": str(out / "report.json"), "events_log": str(out / "events.log")},
        "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not args.quiet:
        _summarize(report.document)
    return EXIT_OK


def _summarize(doc: dict) -> None:
    print(f"{doc['kind']}  config {doc['config_digest'][:12]}  seed {doc['master_seed']}")
    for agent_id, a in doc["agents"].items():
        print(f"  {agent_id:<20} net {a['net_mean']:>16} +- {a['net_stderr']}")
    flagged = [r["name"] for r in doc["comparisons"] if r["flag"]]
    if doc["comparisons"]:
        print(f"  comparisons: {len(doc['comparisons'])} rows, {len(flagged)} flagged")
    for row in doc.get("depth", []):
        print(f"  depth {row['depth']}: supply {row['supply']} flip cost {row['flip_cost']}")
    print(f"  snapshot {doc['snapshot_digest']}")


# -- econ ---------------------------------------------------------------

def _parse_grid(spec: str):
    try:
        name, rng = spec.split("=", 1)
        start, stop, step = (to_fraction(x) for x in rng.split(":"))
    except ValueError:
        raise ValueError(f"--grid expects PARAM=START:STOP:STEP, got {spec!r}") from None
    if step <= 0:
        raise ValueError("--grid step must be positive")
    values = []
    v = start
    while v <= stop:
        values.append(v)
        v += step
    return name, values


def _fmt(v: Fraction) -> str:
    return economics.render(v)


def cmd_econ(args) -> int:
    fn, flags = _ECON[args.theorem]
    names = [f for f, _ in flags]
    try:
        values = {f: to_fraction(getattr(args, f)) for f in names}
        if args.grid is None:
            print(economics.render(fn(*(values[f] for f in names))))
            return EXIT_OK
        swept, points = _parse_grid(args.grid)
        if swept not in values:
            raise ValueError(f"cannot sweep {swept!r}; choose one of {', '.join(names)}")
        print(f"{swept}\t{args.theorem}")
        for point in points:
            values[swept] = point
            print(f"{_fmt(point)}\t{economics.render(fn(*(values[f] for f in names)))}")
    except (ValueError, TypeError, DomainError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    return EXIT_OK


# -- replay -------------------------------------------------------------

def cmd_replay(args) -> int:
    try:
        lines = args.events_log.read_text(encoding="utf-8").splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
    except FileNotFoundError:
        _err(f"{args.events_log}: no such file")
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        _err(f"{args.events_log}: malformed record at line {exc.lineno}")
        return EXIT_INVARIANT
    try:
        engine = replay(records)
    except ReplayMismatch as exc:
        _err(f"replay mismatch: {exc}")
        return EXIT_INVARIANT
    digest = engine.snapshot_digest()
    print(digest)
    report_path = args.report or args.events_log.with_name("report.json")
    if args.report is None and not report_path.exists():
        return EXIT_OK
    try:
        expected = json.loads(report_path.read_text(encoding="utf-8"))["snapshot_digest"]
    except (FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        _err(f"{report_path}: cannot read snapshot_digest ({exc})")
        return EXIT_CONFIG
    if digest != expected:
        _err(f"digest mismatch: replay {digest} != report {expected}")
        return EXIT_INVARIANT
    if not args.quiet:
        print("digest matches report", file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "econ": cmd_econ, "replay": cmd_replay}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
