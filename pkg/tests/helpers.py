"""Small builders for scenario documents used across the test modules."""

import json
from pathlib import Path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def config_doc(name: str) -> dict:
    return json.loads((CONFIGS / f"{name}.json").read_text())


def agents_doc(*agents, horizon=200, seed=1, replicates=1, **extra) -> dict:
    doc = {"schema": "tdm/scenario/v1", "kind": "agents", "horizon": horizon,
           "master_seed": seed, "replicates": replicates, "agents": list(agents)}
    doc.update(extra)
    return doc


def agent(agent_id, kind, tokens=None, **fields):
    a = {"id": agent_id, "strategy": {"type": kind, **fields}}
    if tokens is not None:
        a["tokens"] = tokens
    return a
