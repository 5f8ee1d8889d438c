#!/usr/bin/env python3
"""Run every shipped scenario config and replay its event log.

Outputs land in ``<out>/<config name>/``. Exits non-zero if any run or replay fails.
"""

import argparse
import sys
from pathlib import Path

from tdm.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run(out: Path, workers: int) -> int:
    failures = 0
    for cfg in sorted((ROOT / "configs").glob("*.json")):
        dest = out / cfg.stem
        print(f"== {cfg.name}")
        code = main(["--out", str(dest), "run", str(cfg), "--workers", str(workers)])
        if code == 0:
            code = main(["--quiet", "replay", str(dest / "events.log")])
        if code != 0:
            print(f"   failed with exit {code}", file=sys.stderr)
            failures += 1
    return failures


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    sys.exit(1 if run(args.out, args.workers) else 0)
