#!/usr/bin/env python3
"""Leaker EV grid: Monte Carlo estimate vs the closed form, one line per cell."""

import argparse
import json
from pathlib import Path

from tdm.scenario import load_config
from tdm.sim import estimate_theorem2

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "theorem2_grid.json")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--cells", type=int, help="override the number of cells")
    args = ap.parse_args()

    doc = json.loads(args.config.read_text())
    if args.cells:
        doc.setdefault("grid", {})["cells"] = args.cells
    cfg = load_config(doc, seed_override=args.seed)
    rows, _, _, _ = estimate_theorem2(cfg)

    print(f"{'cell':<16}{'p':>6}{'beta':>6}{'gamma':>6}{'alpha':>7}{'k':>4}{'ell':>4}{'D':>6}"
          f"{'closed form':>14}{'mc mean':>14}{'stderr':>11}  flag")
    for r in rows:
        c = r["cell"]
        print(f"{r['name']:<16}{c['p_detect']:>6}{c['beta']:>6}{c['gamma']:>6}{c['alpha']:>7}{c['k']:>4}"
              f"{c['ell']:>4}{c['D']:>6}{r['closed_form']:>14}{r['monte_carlo_mean']:>14}{r['stderr']:>11}"
              f"  {'FLAG' if r['flag'] else '-'}")
    sig = [r for r in rows if r["significant"]]
    print(f"\n{len(rows)} cells, {sum(r['flag'] for r in rows)} flagged, "
          f"{sum(r['sign_agree'] for r in sig)}/{len(sig)} significant cells agree in sign")


if __name__ == "__main__":
    main()
