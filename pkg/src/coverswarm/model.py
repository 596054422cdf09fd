"""Core domain types: torrents, nodes, bitfields, active/download sets, scenarios."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

CLIENT = "client"
SEED = "seed"
INQUISITOR_PASSIVE = "inquisitor-passive"
INQUISITOR_DECOY = "inquisitor-decoy"
ROLES = (CLIENT, SEED, INQUISITOR_PASSIVE, INQUISITOR_DECOY)

JOINING = "joining"
TRADING = "trading"
SEEDING = "seeding"
DEPARTED = "departed"


class ScenarioError(ValueError):
    """Raised when a scenario file or config violates an invariant."""


@dataclass(frozen=True)
class TorrentMeta:
    """Immutable description of one published object."""

    torrent: int
    total_bytes: int
    piece_size: int

    def __post_init__(self):
        if self.total_bytes <= 0 or self.piece_size <= 0:
            raise ScenarioError("total_bytes and piece_size must be positive")
        if self.total_bytes % self.piece_size != 0:
            raise ScenarioError("total_bytes must be a multiple of piece_size")

    @property
    def piece_count(self) -> int:
        return self.total_bytes // self.piece_size


class PieceBitfield:
    """Piece possession for one torrent, with exact bytes-left accounting.

    Bits live in an int mask; bytes_left is derived and kept consistent.
    """

    __slots__ = ("meta", "mask", "count")

    def __init__(self, meta: TorrentMeta, complete: bool = False):
        self.meta = meta
        if complete:
            self.mask = (1 << meta.piece_count) - 1
            self.count = meta.piece_count
        else:
            self.mask = 0
            self.count = 0

    def has(self, piece: int) -> bool:
        return bool(self.mask >> piece & 1)

    def set(self, piece: int) -> bool:
        """Mark a piece received. Returns False if it was already held."""
        bit = 1 << piece
        if self.mask & bit:
            return False
        self.mask |= bit
        self.count += 1
        return True

    @property
    def bytes_left(self) -> int:
        return self.meta.total_bytes - self.count * self.meta.piece_size

    @property
    def complete(self) -> bool:
        return self.count == self.meta.piece_count


class ActiveSet:
    """The k torrents a node is currently trading, order preserved."""

    __slots__ = ("k", "torrents")

    def __init__(self, k: int, torrents):
        self.k = k
        self.torrents = list(torrents)
        if len(set(self.torrents)) != len(self.torrents):
            raise ScenarioError("active set members must be distinct")

    def __contains__(self, torrent: int) -> bool:
        return torrent in self.torrents

    def __len__(self) -> int:
        return len(self.torrents)

    def __iter__(self):
        return iter(self.torrents)

    def swap(self, dropped: int, added: int):
        """Replace one member, preserving cardinality."""
        if dropped not in self.torrents or added in self.torrents:
            raise ValueError("swap must drop a member and add a non-member")
        self.torrents[self.torrents.index(dropped)] = added


@dataclass
class ValuationWeights:
    w_ds: float = 0.5
    w_a: float = 0.25
    w_R: float = 8.0
    w_c: float = 2.0
    completion_cap: float = 4.0
    dcx_max: int = 8
    supply_floor: int = 1

    def __post_init__(self):
        if min(self.w_ds, self.w_a, self.w_R, self.w_c) < 0:
            raise ScenarioError("valuation weights must be non-negative")
        if self.completion_cap < 1 or self.dcx_max < 1 or self.supply_floor < 1:
            raise ScenarioError("completion_cap, dcx_max, supply_floor must be >= 1")


@dataclass
class Durations:
    """Simulation cadences and timeouts, in simulated seconds."""

    unchoke_s: float = 30.0
    active_set_s: float = 900.0
    heartbeat_s: float = 300.0
    seed_linger_s: float = 0.0
    time_cap_s: float = 86400.0
    control_latency_s: float = 0.05
    snub_timeout_s: float = 20.0
    snub_duration_s: float = 60.0
    # 0 = everyone joins at t=0; otherwise joins spread uniformly over this
    join_stagger_s: float = 0.0

    @property
    def expiry_window_s(self) -> float:
        # three missed heartbeats before the directory forgets a node
        return 3.0 * self.heartbeat_s


@dataclass
class NodeParams:
    unchoke_slots: int = 4
    optimistic_slots: int = 1
    neighborhood: int = 20
    pipeline: int = 4
    epsilon_random: float = 0.1
    max_links: int = 64
    peers_request: int = 30


@dataclass
class ScenarioConfig:
    seed: int = 1
    k: int = 5
    clients: int = 100
    seeds_per_torrent: int = 1
    torrents: int = 40
    file_bytes: int = 2 * 1024 * 1024
    piece_bytes: int = 64 * 1024
    up_bps: int = 1_000_000
    down_bps: int = 1_000_000
    # altruistic seeds may be provisioned differently; 0 = same as clients
    seed_up_bps: int = 0
    seed_down_bps: int = 0
    popularity_rules: list = field(default_factory=lambda: [(0.10, 0.50)])
    durations: Durations = field(default_factory=Durations)
    weights: ValuationWeights = field(default_factory=ValuationWeights)
    node: NodeParams = field(default_factory=NodeParams)
    late_start: bool = False


@dataclass(frozen=True)
class ValidatedScenario:
    """A ScenarioConfig that passed validate_scenario. Treat as read-only."""

    cfg: ScenarioConfig

    def __getattr__(self, name):
        if name.startswith("_") or name == "cfg":
            raise AttributeError(name)
        return getattr(self.cfg, name)

    @property
    def piece_count(self) -> int:
        return self.cfg.file_bytes // self.cfg.piece_bytes

    def meta(self, torrent: int) -> TorrentMeta:
        return TorrentMeta(torrent, self.cfg.file_bytes, self.cfg.piece_bytes)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self.cfg), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate_scenario(cfg: ScenarioConfig) -> ValidatedScenario:
    """Check every cross-field invariant; raise ScenarioError on the first failure."""
    if cfg.k < 1:
        raise ScenarioError("k must be >= 1")
    if cfg.k > cfg.torrents:
        raise ScenarioError("k exceeds torrent count")
    if cfg.clients < 0:
        raise ScenarioError("client count may not be negative")
    if cfg.clients + cfg.torrents * cfg.seeds_per_torrent < cfg.k:
        raise ScenarioError("peer count below k")
    if cfg.torrents < 1:
        raise ScenarioError("need at least one torrent")
    if cfg.seeds_per_torrent < 1:
        raise ScenarioError("need at least one seed per torrent")
    if cfg.up_bps <= 0 or cfg.down_bps <= 0:
        raise ScenarioError("zero bandwidth")
    if cfg.seed_up_bps < 0 or cfg.seed_down_bps < 0:
        raise ScenarioError("seed bandwidth may not be negative")
    if cfg.file_bytes <= 0 or cfg.piece_bytes <= 0:
        raise ScenarioError("file_bytes and piece_bytes must be positive")
    if cfg.file_bytes % cfg.piece_bytes != 0:
        raise ScenarioError("file_bytes must be a multiple of piece_bytes")
    total_clients = 0.0
    for frac_t, frac_c in cfg.popularity_rules:
        if not (0.0 < frac_t <= 1.0 and 0.0 < frac_c <= 1.0):
            raise ScenarioError("popularity fractions must be in (0, 1]")
        total_clients += frac_c
    if total_clients > 1.0 + 1e-9:
        raise ScenarioError("popularity client fractions exceed 1.0")
    if not (0.0 <= cfg.node.epsilon_random <= 1.0):
        raise ScenarioError("epsilon_random must be a probability")
    # touch the weight/duration invariants (their __post_init__ already ran,
    # but configs mutated after construction are re-checked here)
    ValuationWeights(**asdict(cfg.weights))
    if cfg.durations.unchoke_s <= 0 or cfg.durations.heartbeat_s <= 0 \
            or cfg.durations.active_set_s <= 0:
        raise ScenarioError("cadences must be positive")
    return ValidatedScenario(cfg)


def assign_natives(scn: ValidatedScenario, rng) -> dict[int, int]:
    """Map client index (0..clients-1) to its native torrent id.

    Each popularity rule (frac_torrents, frac_clients) dedicates that share of
    clients to that share of torrents; leftovers spread over leftover torrents.
    Assignment is round-robin within a group, so group torrents end up with
    near-equal native counts.
    """
    torrent_ids = list(range(scn.torrents))
    rng.shuffle(torrent_ids)
    client_ids = list(range(scn.clients))
    rng.shuffle(client_ids)

    natives: dict[int, int] = {}
    t_pos = 0
    c_pos = 0
    for frac_t, frac_c in scn.popularity_rules:
        n_t = max(1, round(frac_t * scn.torrents))
        n_c = round(frac_c * scn.clients)
        group = torrent_ids[t_pos:t_pos + n_t]
        if not group:
            raise ScenarioError("popularity rule exhausted the torrent list")
        for i, c in enumerate(client_ids[c_pos:c_pos + n_c]):
            natives[c] = group[i % len(group)]
        t_pos += n_t
        c_pos += n_c
    rest_torrents = torrent_ids[t_pos:] or torrent_ids
    for i, c in enumerate(client_ids[c_pos:]):
        natives[c] = rest_torrents[i % len(rest_torrents)]
    return natives


def popularity_counts(natives: dict[int, int], torrents: int) -> dict[int, int]:
    """Torrent id -> number of natively interested clients."""
    counts = {t: 0 for t in range(torrents)}
    for t in natives.values():
        counts[t] += 1
    return counts


_SCALAR_FIELDS = {
    "seed": int, "k": int, "clients": int, "seeds_per_torrent": int,
    "torrents": int, "file_bytes": int, "piece_bytes": int,
    "up_bps": int, "down_bps": int, "seed_up_bps": int, "seed_down_bps": int,
}


def _parse_popularity(raw: str):
    rules = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        ft, _, fc = part.partition(":")
        rules.append((float(ft), float(fc)))
    return rules


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse an INI scenario file. Unknown keys are rejected."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (w_R vs w_r)
    read = parser.read(path)
    if not read:
        raise ScenarioError(f"cannot read scenario file: {path}")
    cfg = ScenarioConfig()
    if parser.has_section("scenario"):
        for key, raw in parser.items("scenario"):
            if key == "popularity_rules":
                cfg.popularity_rules = _parse_popularity(raw)
            elif key == "late_start":
                cfg.late_start = raw.strip().lower() in ("1", "true", "yes")
            elif key in _SCALAR_FIELDS:
                setattr(cfg, key, _SCALAR_FIELDS[key](raw))
            else:
                raise ScenarioError(f"unknown scenario key: {key}")
    for section, target in (("durations", cfg.durations),
                            ("valuation", cfg.weights),
                            ("node", cfg.node)):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if not hasattr(target, key):
                raise ScenarioError(f"unknown {section} key: {key}")
            setattr(target, key, _coerce(getattr(target, key), raw))
    return cfg


def _coerce(current, raw: str):
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(float(raw))
    if isinstance(current, float):
        return float(raw)
    return raw
