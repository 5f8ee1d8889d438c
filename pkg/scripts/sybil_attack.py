#!/usr/bin/env python3
"""Duplication attack with and without defenses, swept over identity counts."""

import argparse
import json
from pathlib import Path

from tdm.scenario import load_config
from tdm.sim import run_scenario

ROOT = Path(__file__).resolve().parent.parent


def sybil_row(name: str, identities: int, replicates: int, workers: int) -> str:
    doc = json.loads((ROOT / "configs" / f"{name}.json").read_text())
    doc["replicates"] = replicates
    for a in doc["agents"]:
        if a["strategy"]["type"] == "SybilDuplicator":
            a["strategy"]["identity_count"] = identities
    report = run_scenario(load_config(doc), workers=workers).document
    s = report["agents"]["sybil"]
    return f"{name:<18}{identities:>4}{s['net_mean']:>16}{s['net_stderr']:>12}{report['events'].get('duplicates_blocked', 0):>10}"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--max-identities", type=int, default=5)
    args = ap.parse_args()
    print(f"{'config':<18}{'ids':>4}{'net mean':>16}{'stderr':>12}{'blocked':>10}")
    for name in ("sybil_defended", "sybil_undefended"):
        for n in range(1, args.max_identities + 1):
            print(sybil_row(name, n, args.replicates, args.workers))


if __name__ == "__main__":
    main()
