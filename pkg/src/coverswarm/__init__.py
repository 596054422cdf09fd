"""Deterministic discrete-event simulator of a cover-traffic trading swarm."""

from .engine import RunTrace, allocate_bandwidth, load_run, run, write_run
from .model import (ScenarioConfig, ScenarioError, TorrentMeta,
                    ValuationWeights, ValidatedScenario, load_scenario,
                    validate_scenario)
from .valuation import (NeighborhoodSnapshot, PeerInfo, TorrentValuation,
                        cross_trading_distance, rank_torrents, torrent_value)

__version__ = "0.1.0"

__all__ = [
    "RunTrace", "ScenarioConfig", "ScenarioError", "TorrentMeta",
    "ValuationWeights", "ValidatedScenario", "NeighborhoodSnapshot",
    "PeerInfo", "TorrentValuation", "allocate_bandwidth",
    "cross_trading_distance", "load_run", "load_scenario", "rank_torrents",
    "run", "torrent_value", "validate_scenario", "write_run",
]
