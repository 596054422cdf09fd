"""Torrent valuation from neighborhood observations.

Everything here is a pure function of a NeighborhoodSnapshot, so nodes can be
valued independently and tests can replay snapshots against brute-force
recounts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .model import TorrentMeta, ValuationWeights


@dataclass
class PeerInfo:
    """What the observer knows about one neighbor."""

    advertised: tuple[int, ...]
    # torrent -> bitmask of pieces the peer is known to hold
    views: dict[int, int] = field(default_factory=dict)
    view_counts: dict[int, int] = field(default_factory=dict)


@dataclass
class NeighborhoodSnapshot:
    """Observer-local knowledge feeding the value computation.

    Contains nothing the observer could not learn from handshakes, Have and
    Request traffic, plus its own state.
    """

    observer: int
    native: int
    active: tuple[int, ...]
    peers: dict[int, PeerInfo]
    have_counts: dict[int, int]
    request_counts: dict[int, int]
    last_traffic: dict[int, float]
    join_time: float


@dataclass
class TorrentValuation:
    torrent: int
    d_cx: int
    N: int
    M: int
    b: float
    s: int
    d: int
    R: int
    a: float
    F: int
    L: int
    c: float
    V: float


def co_advertisement_distances(snapshot: NeighborhoodSnapshot, dcx_max: int) -> dict[int, int]:
    """BFS hop counts from the native interest over the co-advertisement graph.

    Two torrents are adjacent when at least one peer advertises both. Torrents
    never reached get dcx_max. Every torrent any peer advertises is a vertex.
    """
    # torrent -> peer ids advertising it; each peer's set is a clique
    by_torrent: dict[int, list[int]] = {}
    for pid, info in snapshot.peers.items():
        for t in info.advertised:
            by_torrent.setdefault(t, []).append(pid)
    dist = {t: dcx_max for t in by_torrent}
    dist[snapshot.native] = 0
    spent_peers: set[int] = set()
    frontier = deque([snapshot.native])
    while frontier:
        u = frontier.popleft()
        du = dist.get(u, dcx_max)
        if du + 1 >= dcx_max:
            continue
        for pid in by_torrent.get(u, ()):
            if pid in spent_peers:
                continue
            spent_peers.add(pid)
            for v in snapshot.peers[pid].advertised:
                if dist.get(v, dcx_max) > du + 1:
                    dist[v] = du + 1
                    frontier.append(v)
    return dist


def cross_trading_distance(snapshot: NeighborhoodSnapshot, torrent: int, dcx_max: int) -> int:
    """Hops from a torrent to the native interest; 0 for the native itself."""
    if torrent == snapshot.native:
        return 0
    return co_advertisement_distances(snapshot, dcx_max).get(torrent, dcx_max)


def torrent_value(snapshot: NeighborhoodSnapshot, torrent: int, meta: TorrentMeta,
                  own_bitfield, weights: ValuationWeights, now: float,
                  d_cx: int | None = None) -> TorrentValuation:
    """Fill every valuation factor for one torrent.

    own_bitfield may be None when the observer never held any piece. d_cx can
    be passed in when the caller already ran the BFS for a batch of torrents.
    """
    if d_cx is None:
        d_cx = cross_trading_distance(snapshot, torrent, weights.dcx_max)
    N = len(snapshot.peers)
    M = 0
    s = 0
    pieces = meta.piece_count
    for info in snapshot.peers.values():
        if torrent in info.advertised:
            M += 1
            s += info.view_counts.get(torrent, 0)
    d = M * pieces - s
    b = 0.0 if N == 0 else (M / N) / (1 << d_cx)
    R = snapshot.request_counts.get(torrent, 0)
    if torrent in snapshot.active:
        a = float(snapshot.have_counts.get(torrent, 0))
    else:
        a = 1.0 / max(1.0, now - snapshot.last_traffic.get(torrent, snapshot.join_time))
    F = meta.total_bytes
    L = F if own_bitfield is None else own_bitfield.bytes_left
    c = weights.completion_cap if L == 0 else min(weights.completion_cap, F / L)
    V = b * (weights.w_ds * (d / max(s, weights.supply_floor))
             + weights.w_a * a + weights.w_R * R + weights.w_c * c)
    return TorrentValuation(torrent=torrent, d_cx=d_cx, N=N, M=M, b=b, s=s, d=d,
                            R=R, a=a, F=F, L=L, c=c, V=V)


def rank_torrents(values) -> list[int]:
    """Torrent ids in descending value order, ties broken by ascending id."""
    return [tv.torrent for tv in sorted(values, key=lambda tv: (-tv.V, tv.torrent))]
