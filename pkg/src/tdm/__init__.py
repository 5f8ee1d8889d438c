"""Tokenized data structures: a curated-registry protocol engine, its closed-form
incentive calculators and an agent-based simulator."""

__version__ = "0.1.0"

from .economics import (
    Unbounded,
    contribution_ev,
    dishonest_alpha_threshold,
    dishonest_ev,
    honest_ev,
    liveness_budget,
    min_data_price,
    token_unit_value,
)
from .ledger import MICRO, Issuance, Money, TokenEconomy, tokens
from .offchain import ContentStore
from .protocol import Choice, Engine, Partition, Rules, replay
from .scenario import ScenarioConfig, load_config
from .sim import depth_dilution_scan, estimate_theorem2, run_scenario
from .structure import Params, TokenizedDataStructure, new_structure

__all__ = [
    "MICRO", "Choice", "ContentStore", "Engine", "Issuance", "Money", "Params", "Partition",
    "Rules", "ScenarioConfig", "TokenEconomy", "TokenizedDataStructure", "Unbounded",
    "contribution_ev", "depth_dilution_scan", "dishonest_alpha_threshold", "dishonest_ev",
    "estimate_theorem2", "honest_ev", "liveness_budget", "load_config", "min_data_price",
    "new_structure", "replay", "run_scenario", "token_unit_value", "tokens",
]
