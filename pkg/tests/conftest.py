"""Shared fixtures: tiny scenarios, a micro environment for node unit tests,
and the raw-message snapshot builder used by the valuation oracle."""

from __future__ import annotations

import random

import pytest

from coverswarm.dht import DhtState
from coverswarm.model import (NodeParams, ScenarioConfig, TorrentMeta,
                              ValuationWeights, validate_scenario)
from coverswarm.valuation import NeighborhoodSnapshot, PeerInfo


def tiny_config(**overrides) -> ScenarioConfig:
    cfg = ScenarioConfig(seed=7, k=3, clients=12, torrents=8,
                         file_bytes=512 * 1024, piece_bytes=64 * 1024)
    cfg.durations.unchoke_s = 10.0
    cfg.durations.active_set_s = 60.0
    cfg.durations.heartbeat_s = 30.0
    cfg.durations.time_cap_s = 1200.0
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture
def tiny_scenario():
    return validate_scenario(tiny_config())


class FakeEnv:
    """Minimal Env surface so node operations run outside the event loop."""

    def __init__(self, k=3, torrents=6, pieces=8, piece_bytes=65536):
        cfg = ScenarioConfig(k=k, clients=4, torrents=torrents,
                             file_bytes=pieces * piece_bytes,
                             piece_bytes=piece_bytes)
        self.scenario = validate_scenario(cfg)
        self.weights = cfg.weights
        self.params = cfg.node
        self.now = 0.0
        self.rng = random.Random(99)
        self.dht = DhtState(cfg.durations.expiry_window_s)
        for t in range(torrents):
            self.dht.publish(t)
        self.metas = {t: TorrentMeta(t, pieces * piece_bytes, piece_bytes)
                      for t in range(torrents)}
        self.nodes = {}
        self.traced = []
        self.sent = []
        self.transfers = []
        self.departures = []
        self.handshake_log = []
        self.violations = {}
        self._next_tid = 0

    @property
    def piece_count(self):
        return self.scenario.piece_count

    def meta(self, torrent):
        return self.metas[torrent]

    def node(self, pid):
        return self.nodes.get(pid)

    def trace(self, node_id, kind, torrent=None, peer=None, bytes=None, dcx=None):
        self.traced.append((self.now, node_id, kind, torrent, peer, bytes, dcx))

    def send(self, src, dst, msg):
        self.sent.append((src, dst, msg))

    def broadcast_have(self, src, torrent, piece):
        self.traced.append((self.now, src, "have_sent", torrent, None, None, None))
        self.sent.append((src, None, ("have", torrent, piece)))

    def start_transfer(self, src, dst, torrent, piece):
        self._next_tid += 1
        self.transfers.append((src, dst, torrent, piece))
        return self._next_tid

    def cancel_pair_transfers(self, a, b):
        pass

    def schedule_depart(self, pid, when):
        self.departures.append((pid, when))

    def record_handshake(self, ka, kb, overlap, pre_drop):
        self.handshake_log.append((ka, kb, overlap, pre_drop))

    def count_violation(self, name):
        self.violations[name] = self.violations.get(name, 0) + 1


def make_snapshot(native=0, active=(0, 1, 2), peers=None, have=None, request=None,
                  last_traffic=None, join_time=0.0, observer=99):
    return NeighborhoodSnapshot(
        observer=observer, native=native, active=tuple(active),
        peers=peers or {}, have_counts=dict(have or {}),
        request_counts=dict(request or {}), last_traffic=dict(last_traffic or {}),
        join_time=join_time)


def peer_info(advertised, views=None):
    views = dict(views or {})
    return PeerInfo(advertised=tuple(sorted(advertised)), views=views,
                    view_counts={t: bin(m).count("1") for t, m in views.items()})


# -- raw message log -> snapshot, the implementation-side accumulation -------


def snapshot_from_log(log, observer, native, active, join_time, now):
    """Accumulate a NeighborhoodSnapshot the way a node would.

    Log entries: ("handshake", peer, advertised, {t: mask}),
    ("have", time, peer, t, piece), ("request", time, peer, t).
    """
    peers: dict[int, PeerInfo] = {}
    have_counts: dict[int, int] = {}
    request_counts: dict[int, int] = {}
    last_traffic: dict[int, float] = {}
    for entry in log:
        kind = entry[0]
        if kind == "handshake":
            _, pid, advertised, masks = entry
            peers[pid] = PeerInfo(
                advertised=tuple(sorted(advertised)),
                views={t: m for t, m in masks.items() if m},
                view_counts={t: bin(m).count("1") for t, m in masks.items() if m})
        elif kind == "have":
            _, when, pid, t, piece = entry
            info = peers[pid]
            have_counts[t] = have_counts.get(t, 0) + 1
            last_traffic[t] = when
            bit = 1 << piece
            old = info.views.get(t, 0)
            if not old & bit:
                info.views[t] = old | bit
                info.view_counts[t] = info.view_counts.get(t, 0) + 1
        elif kind == "request":
            _, when, pid, t = entry
            request_counts[t] = request_counts.get(t, 0) + 1
            last_traffic[t] = when
    return NeighborhoodSnapshot(observer=observer, native=native,
                                active=tuple(active), peers=peers,
                                have_counts=have_counts,
                                request_counts=request_counts,
                                last_traffic=last_traffic, join_time=join_time)


def random_message_log(rng, n_peers, n_torrents, n_pieces):
    """A plausible observation history: handshakes first, then traffic."""
    log = []
    for pid in range(n_peers):
        size = rng.randint(1, min(3, n_torrents))
        advertised = rng.sample(range(n_torrents), size)
        masks = {t: rng.getrandbits(n_pieces) for t in advertised}
        log.append(("handshake", pid, tuple(advertised), masks))
    when = 0.0
    for _ in range(rng.randint(0, 30)):
        when += rng.random() * 5.0
        pid = rng.randrange(n_peers)
        t = rng.randrange(n_torrents)
        if rng.random() < 0.6:
            log.append(("have", when, pid, t, rng.randrange(n_pieces)))
        else:
            log.append(("request", when, pid, t))
    return log, when
