#!/usr/bin/env python3
"""Attack cost vs nesting depth: tokens needed to pass a garbage candidacy alone."""

import argparse
import json
from pathlib import Path

from tdm.scenario import load_config
from tdm.sim import depth_dilution_scan

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "depth_dilution.json")
    ap.add_argument("--max-depth", type=int)
    args = ap.parse_args()

    cfg = load_config(json.loads(args.config.read_text()))
    rows, _, digest = depth_dilution_scan(cfg, args.max_depth or cfg.depth.max_depth)
    print(f"{'depth':>5}{'supply':>22}{'flip cost':>22}{'cost value':>22}  verified")
    for r in rows:
        print(f"{r['depth']:>5}{r['supply']:>22}{r['flip_cost']:>22}{r['flip_cost_value']:>22}  {r['verified']}")
    print(f"snapshot {digest}")


if __name__ == "__main__":
    main()
