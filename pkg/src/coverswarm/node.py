"""Per-peer protocol state machine.

Nodes talk to the world through a narrow Env surface owned by the engine
(clock, rng, dht, message scheduling, transfer management, trace). All
mutation of a node happens from the single-threaded event loop.
"""

from __future__ import annotations

from collections import deque

from .model import (CLIENT, DEPARTED, JOINING, SEED, SEEDING, TRADING,
                    ActiveSet, PieceBitfield, ScenarioError)
from .valuation import (NeighborhoodSnapshot, PeerInfo,
                        co_advertisement_distances, rank_torrents,
                        torrent_value)

MSG_HAVE = "have"
MSG_REQUEST = "request"
MSG_CHOKE = "choke"
MSG_UNCHOKE = "unchoke"


class PeerLink:
    """One live connection; choke state spans the link, not a single torrent."""

    __slots__ = ("peer", "info", "shared", "am_choking", "peer_choking",
                 "credit", "snubbed_until", "outstanding", "pending")

    def __init__(self, peer: int, info: PeerInfo, shared: set[int]):
        self.peer = peer
        self.info = info
        self.shared = shared
        self.am_choking = True
        self.peer_choking = True
        self.credit: dict[int, int] = {}
        self.snubbed_until = 0.0
        # requests we sent them: (torrent, piece) -> send time
        self.outstanding: dict[tuple[int, int], float] = {}
        # requests they sent us, waiting for upload service
        self.pending: deque[tuple[int, int]] = deque()


class Node:
    __slots__ = (
        "id", "role", "native", "k", "phase", "join_time", "active",
        "bitfields", "download_set", "links", "have_counts", "request_counts",
        "last_traffic", "rarity", "requested", "requested_masks", "unchoked",
        "rotation", "upload_ptr", "current_upload", "_dcx_cache", "_dcx_dirty",
        "native_done_time", "bytes_downloaded",
    )

    def __init__(self, node_id: int, role: str, native: int | None, k: int):
        self.id = node_id
        self.role = role
        self.native = native
        self.k = k
        self.phase = JOINING
        self.join_time = 0.0
        self.active: ActiveSet | None = None
        self.bitfields: dict[int, PieceBitfield] = {}
        self.download_set: dict[int, float] = {}
        self.links: dict[int, PeerLink] = {}
        self.have_counts: dict[int, int] = {}
        self.request_counts: dict[int, int] = {}
        self.last_traffic: dict[int, float] = {}
        # piece availability over the neighborhood, per active torrent
        self.rarity: dict[int, list[int]] = {}
        # globally outstanding requests: (torrent, piece) -> peer
        self.requested: dict[tuple[int, int], int] = {}
        self.requested_masks: dict[int, int] = {}
        self.unchoked: set[int] = set()
        self.rotation = 0
        self.upload_ptr = -1
        self.current_upload: int | None = None
        self._dcx_cache: dict[int, int] | None = None
        self._dcx_dirty = True
        self.native_done_time: float | None = None
        self.bytes_downloaded = 0

    # -- snapshot assembly ------------------------------------------------

    def snapshot(self, env) -> NeighborhoodSnapshot:
        return NeighborhoodSnapshot(
            observer=self.id, native=self.native if self.native is not None else -1,
            active=tuple(self.active) if self.active else (),
            peers={pid: link.info for pid, link in self.links.items()},
            have_counts=self.have_counts, request_counts=self.request_counts,
            last_traffic=self.last_traffic, join_time=self.join_time)

    def dcx(self, env, torrent: int) -> int:
        """Trade distance from the native for exchange classification, cached.

        Unlike the valuation's peer-only relation, the node itself counts as
        a trading party: while it advertises both a cover and its native,
        cover uploads convert to native downloads within one relationship.
        """
        if self.native is None:
            return env.weights.dcx_max
        if torrent == self.native:
            return 0
        if self._dcx_dirty or self._dcx_cache is None:
            snap = self.snapshot(env)
            if self.active is not None:
                peers = dict(snap.peers)
                peers[self.id] = PeerInfo(advertised=tuple(sorted(self.active)))
                snap = NeighborhoodSnapshot(
                    observer=snap.observer, native=snap.native,
                    active=snap.active, peers=peers,
                    have_counts=snap.have_counts,
                    request_counts=snap.request_counts,
                    last_traffic=snap.last_traffic, join_time=snap.join_time)
            self._dcx_cache = co_advertisement_distances(snap, env.weights.dcx_max)
            self._dcx_dirty = False
        return self._dcx_cache.get(torrent, env.weights.dcx_max)

    def mark_topology_change(self):
        self._dcx_dirty = True

    def value_torrents(self, env, torrents) -> dict:
        """TorrentValuation for each requested torrent under one snapshot."""
        snap = self.snapshot(env)
        dist = co_advertisement_distances(snap, env.weights.dcx_max)
        out = {}
        for t in torrents:
            d_cx = 0 if t == snap.native else dist.get(t, env.weights.dcx_max)
            out[t] = torrent_value(snap, t, env.meta(t), self.bitfields.get(t),
                                   env.weights, env.now, d_cx=d_cx)
        return out

    # -- rarity bookkeeping -----------------------------------------------

    def _rarity_add(self, torrent: int, mask: int):
        counts = self.rarity.get(torrent)
        if counts is None or not mask:
            return
        i = 0
        while mask:
            if mask & 1:
                counts[i] += 1
            mask >>= 1
            i += 1

    def _rarity_sub(self, torrent: int, mask: int):
        counts = self.rarity.get(torrent)
        if counts is None or not mask:
            return
        i = 0
        while mask:
            if mask & 1:
                counts[i] -= 1
            mask >>= 1
            i += 1

    def _rarity_rebuild(self, env, torrent: int):
        counts = [0] * env.piece_count
        self.rarity[torrent] = counts
        for link in self.links.values():
            mask = link.info.views.get(torrent, 0)
            i = 0
            while mask:
                if mask & 1:
                    counts[i] += 1
                mask >>= 1
                i += 1


# -- joining and connections ------------------------------------------------


def join(node: Node, env) -> None:
    """Pick the initial active set, register with the directory, link up."""
    if node.phase != JOINING:
        return
    advertised = env.dht.torrent_list()
    if len(advertised) < node.k:
        raise ScenarioError("fewer torrents advertised than k")
    if env.scenario.late_start or node.native is None:
        chosen = env.rng.sample(advertised, node.k)
    else:
        others = [t for t in advertised if t != node.native]
        chosen = [node.native] + env.rng.sample(others, node.k - 1)
    node.active = ActiveSet(node.k, chosen)
    node.join_time = env.now
    env.trace(node.id, "join")
    for t in sorted(chosen):
        env.dht.active(node.id, t, env.now)
        env.trace(node.id, "active_set_change", torrent=t, bytes=1)
        node.rarity[t] = [0] * env.piece_count
    node.phase = TRADING
    build_neighborhood(node, env, env.params.neighborhood)


def connect_peer(a: Node, b: Node, env) -> int:
    """Handshake per advertised torrent; keep one link over the shared set.

    Returns the pre-drop connection count (shared torrents counted once).
    """
    overlap = sorted(set(a.active) & set(b.active))
    pre_drop = len(a.active) + len(b.active) - len(overlap)
    env.record_handshake(len(a.active), len(b.active), len(overlap), pre_drop)
    if not overlap:
        return pre_drop
    if len(a.links) >= env.params.max_links or len(b.links) >= env.params.max_links:
        return pre_drop
    _make_link(a, b)
    _make_link(b, a)
    return pre_drop


def _exchange_views(of: Node) -> tuple[dict[int, int], dict[int, int]]:
    views, counts = {}, {}
    for t in of.active:
        bf = of.bitfields.get(t)
        if bf is not None and bf.mask:
            views[t] = bf.mask
            counts[t] = bf.count
    return views, counts


def _make_link(owner: Node, other: Node):
    views, counts = _exchange_views(other)
    info = PeerInfo(advertised=tuple(sorted(other.active)), views=views,
                    view_counts=counts)
    shared = set(owner.active) & set(other.active)
    owner.links[other.id] = PeerLink(other.id, info, shared)
    for t, mask in views.items():
        owner._rarity_add(t, mask)
    owner.mark_topology_change()


def rehandshake(a: Node, b: Node, env) -> bool:
    """Refresh metadata after an active-set change. Returns False on teardown."""
    la, lb = a.links.get(b.id), b.links.get(a.id)
    if la is None or lb is None:
        return False
    shared = set(a.active) & set(b.active)
    if not shared:
        teardown(a, b, env)
        return False
    for owner, link, other in ((a, la, b), (b, lb, a)):
        for t, mask in link.info.views.items():
            owner._rarity_sub(t, mask)
        views, counts = _exchange_views(other)
        link.info.advertised = tuple(sorted(other.active))
        link.info.views = views
        link.info.view_counts = counts
        link.shared = shared
        for t, mask in views.items():
            owner._rarity_add(t, mask)
        _drop_unshared_requests(owner, link)
        link.pending = deque(r for r in link.pending if r[0] in shared)
        owner.mark_topology_change()
    return True


def _drop_unshared_requests(owner: Node, link: PeerLink):
    for key in [k for k in link.outstanding if k[0] not in link.shared]:
        del link.outstanding[key]
        owner.requested.pop(key, None)
        owner.requested_masks[key[0]] = owner.requested_masks.get(key[0], 0) & ~(1 << key[1])


def teardown(a: Node, b: Node, env):
    env.cancel_pair_transfers(a.id, b.id)
    for owner, other in ((a, b), (b, a)):
        link = owner.links.pop(other.id, None)
        if link is None:
            continue
        for t, mask in link.info.views.items():
            owner._rarity_sub(t, mask)
        for key in link.outstanding:
            owner.requested.pop(key, None)
            owner.requested_masks[key[0]] = owner.requested_masks.get(key[0], 0) & ~(1 << key[1])
        if not link.am_choking:
            # a dropped connection ends the grant; keep the trace balanced
            env.trace(owner.id, "choke", peer=other.id)
        owner.unchoked.discard(other.id)
        owner.mark_topology_change()


def build_neighborhood(node: Node, env, target_size: int) -> None:
    """Split the peer budget across active torrents proportionally to value.

    At join all values are zero, so every torrent contributes equally. Peers
    appearing in several of our swarms are preferred.
    """
    if node.phase != TRADING:
        return
    actives = list(node.active)
    vals = node.value_torrents(env, actives)
    alloc = _largest_remainder(target_size, [max(0.0, vals[t].V) for t in actives])
    lists: dict[int, list[int]] = {}
    seen: dict[int, int] = {}
    for t in actives:
        env.trace(node.id, "dht_query", torrent=t)
        lists[t] = env.dht.peers_list(t, env.params.peers_request, env.rng,
                                      exclude=node.id)
        for pid in lists[t]:
            seen[pid] = seen.get(pid, 0) + 1
    for t, quota in zip(actives, alloc):
        have = sum(1 for link in node.links.values() if t in link.shared)
        if have >= quota:
            continue
        ordered = sorted(range(len(lists[t])), key=lambda i: (-seen[lists[t][i]], i))
        for i in ordered:
            if have >= quota or len(node.links) >= env.params.max_links:
                break
            pid = lists[t][i]
            if pid in node.links:
                continue
            other = env.node(pid)
            if other is None or other.phase in (JOINING, DEPARTED):
                continue
            connect_peer(node, other, env)
            link = node.links.get(pid)
            if link is not None and t in link.shared:
                have += 1
    # starvation guard: quotas follow value, so a zero-value torrent draws
    # nothing; an incomplete torrent must still keep at least one link that
    # can actually serve pieces we lack
    for t in actives:
        bf = node.bitfields.get(t)
        if bf is not None and bf.complete:
            continue
        mine = bf.mask if bf is not None else 0
        if any(link.info.views.get(t, 0) & ~mine for link in node.links.values()):
            continue
        for pid in lists.get(t, ()):
            if pid in node.links or len(node.links) >= env.params.max_links:
                continue
            other = env.node(pid)
            if other is None or other.phase in (JOINING, DEPARTED):
                continue
            connect_peer(node, other, env)
            link = node.links.get(pid)
            if link is not None and link.info.views.get(t, 0) & ~mine:
                break


def _largest_remainder(total: int, weights: list[float]) -> list[int]:
    n = len(weights)
    if n == 0:
        return []
    wsum = sum(weights)
    if wsum <= 0:
        quotas = [total / n] * n
    else:
        quotas = [total * w / wsum for w in weights]
    floors = [int(q) for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(n), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


# -- message handling ---------------------------------------------------------


def handle_message(node: Node, frm: int, msg: tuple, env) -> None:
    if node.phase == DEPARTED:
        return
    kind = msg[0]
    if kind == MSG_HAVE:
        _on_have(node, frm, msg[1], msg[2], env)
    elif kind == MSG_REQUEST:
        _on_request(node, frm, msg[1], msg[2], env)
    elif kind == MSG_UNCHOKE:
        link = node.links.get(frm)
        if link is not None:
            link.peer_choking = False
            issue_requests(node, link, env)
    elif kind == MSG_CHOKE:
        link = node.links.get(frm)
        if link is not None:
            link.peer_choking = True
            for key in link.outstanding:
                node.requested.pop(key, None)
                node.requested_masks[key[0]] = node.requested_masks.get(key[0], 0) & ~(1 << key[1])
            link.outstanding.clear()


def _on_have(node: Node, frm: int, torrent: int, piece: int, env):
    link = node.links.get(frm)
    if link is None:
        return
    node.have_counts[torrent] = node.have_counts.get(torrent, 0) + 1
    node.last_traffic[torrent] = env.now
    bit = 1 << piece
    views = link.info.views
    old = views.get(torrent, 0)
    if not old & bit:
        views[torrent] = old | bit
        link.info.view_counts[torrent] = link.info.view_counts.get(torrent, 0) + 1
        counts = node.rarity.get(torrent)
        if counts is not None:
            counts[piece] += 1
    if not link.peer_choking:
        issue_requests(node, link, env)


def _on_request(node: Node, frm: int, torrent: int, piece: int, env):
    node.request_counts[torrent] = node.request_counts.get(torrent, 0) + 1
    node.last_traffic[torrent] = env.now
    link = node.links.get(frm)
    if link is None or link.am_choking:
        return
    bf = node.bitfields.get(torrent)
    if bf is None or not bf.has(piece):
        env.count_violation("request_for_missing_piece")
        return
    if (torrent, piece) not in link.pending:
        link.pending.append((torrent, piece))
    try_start_upload(node, env)


def try_start_upload(node: Node, env) -> None:
    """Serve queued requests, one active transfer at a time, round-robin."""
    if node.current_upload is not None or node.phase == DEPARTED:
        return
    ready = sorted(pid for pid, link in node.links.items()
                   if link.pending and not link.am_choking)
    if not ready:
        return
    nxt = next((pid for pid in ready if pid > node.upload_ptr), ready[0])
    link = node.links[nxt]
    torrent, piece = link.pending.popleft()
    node.upload_ptr = nxt
    node.current_upload = env.start_transfer(node.id, nxt, torrent, piece)


def on_piece(node: Node, frm: int, torrent: int, piece: int, nbytes: int, env) -> None:
    """A piece transfer to this node completed."""
    if node.phase == DEPARTED:
        return
    link = node.links.get(frm)
    key = (torrent, piece)
    node.requested.pop(key, None)
    node.requested_masks[torrent] = node.requested_masks.get(torrent, 0) & ~(1 << piece)
    if link is not None:
        link.outstanding.pop(key, None)
        link.credit[torrent] = link.credit.get(torrent, 0) + nbytes
    node.bytes_downloaded += nbytes
    if node.active is None or torrent not in node.active:
        env.count_violation("piece_for_unshared_torrent")
    bf = node.bitfields.get(torrent)
    if bf is None:
        bf = node.bitfields[torrent] = PieceBitfield(env.meta(torrent))
    env.trace(node.id, "piece_received", torrent=torrent, peer=frm, bytes=nbytes,
              dcx=node.dcx(env, torrent))
    if bf.set(piece):
        env.broadcast_have(node.id, torrent, piece)
        if bf.complete and torrent not in node.download_set:
            node.download_set[torrent] = env.now
            if torrent == node.native:
                node.native_done_time = env.now
    else:
        env.count_violation("duplicate_piece")
    maybe_depart(node, env)
    if link is not None and node.phase == TRADING:
        issue_requests(node, link, env)


# -- requesting ---------------------------------------------------------------


def select_piece(node: Node, peer: int, torrent: int, rng) -> int | None:
    """Rarest-first among pieces the peer has and we lack; random tie-break."""
    link = node.links.get(peer)
    if link is None:
        return None
    bf = node.bitfields.get(torrent)
    mine = bf.mask if bf is not None else 0
    mask = link.info.views.get(torrent, 0) & ~mine & ~node.requested_masks.get(torrent, 0)
    if not mask:
        return None
    counts = node.rarity.get(torrent)
    best: list[int] = []
    best_count = None
    i = 0
    while mask:
        if mask & 1:
            c = counts[i] if counts is not None else 0
            if best_count is None or c < best_count:
                best_count = c
                best = [i]
            elif c == best_count:
                best.append(i)
        mask >>= 1
        i += 1
    return best[0] if len(best) == 1 else best[rng.randrange(len(best))]


def issue_requests(node: Node, link: PeerLink, env) -> None:
    if node.phase != TRADING or link.peer_choking or link.snubbed_until > env.now:
        return
    while len(link.outstanding) < env.params.pipeline:
        candidates = []
        for t in sorted(link.shared):
            bf = node.bitfields.get(t)
            if bf is not None and bf.complete:
                continue
            mine = bf.mask if bf is not None else 0
            if link.info.views.get(t, 0) & ~mine & ~node.requested_masks.get(t, 0):
                candidates.append(t)
        if not candidates:
            return
        t = candidates[0] if len(candidates) == 1 else candidates[env.rng.randrange(len(candidates))]
        piece = select_piece(node, link.peer, t, env.rng)
        if piece is None:
            return
        key = (t, piece)
        link.outstanding[key] = env.now
        node.requested[key] = link.peer
        node.requested_masks[t] = node.requested_masks.get(t, 0) | (1 << piece)
        env.trace(node.id, "request_sent", torrent=t, peer=link.peer)
        env.send(node.id, link.peer, (MSG_REQUEST, t, piece))


# -- periodic rounds ----------------------------------------------------------


def unchoke_round(node: Node, env) -> None:
    """30-second choke rotation: value-adjusted scores, plus one optimistic."""
    if node.phase == DEPARTED:
        return
    now = env.now
    params = env.params
    slots = params.unchoke_slots
    if node.phase == SEEDING or node.role == SEED:
        chosen = _seed_rotation(node, slots + params.optimistic_slots)
    else:
        credited = set()
        for link in node.links.values():
            credited.update(t for t, amount in link.credit.items() if amount)
        vals = node.value_torrents(env, sorted(set(node.active) | credited))
        scored = []
        for pid in sorted(node.links):
            link = node.links[pid]
            score = 0.0
            for t, amount in link.credit.items():
                tv = vals.get(t)
                if tv is not None:
                    score += amount * tv.V
            scored.append((-score, pid))
        scored.sort()
        chosen = {pid for _, pid in scored[:slots]}
        pool = [pid for pid in sorted(node.links)
                if pid not in chosen and node.links[pid].snubbed_until <= now]
        for _ in range(params.optimistic_slots):
            if not pool:
                break
            pick = pool.pop(env.rng.randrange(len(pool)))
            chosen.add(pick)
    _apply_chokes(node, chosen, env)
    _snub_sweep(node, env)
    for link in node.links.values():
        link.credit = {}
    node.have_counts = {}
    node.request_counts = {}
    try_native_reacquire(node, env)
    if node.phase == TRADING and len(node.links) < 0.75 * params.neighborhood:
        build_neighborhood(node, env, params.neighborhood)
        _top_up_requests(node, env)


def _seed_rotation(node: Node, slots: int) -> set[int]:
    """Round-robin best-effort service across peers that still need pieces."""
    hungry = []
    for pid in sorted(node.links):
        link = node.links[pid]
        for t in link.shared:
            held = link.info.view_counts.get(t, 0)
            bf = node.bitfields.get(t)
            if bf is not None and held < bf.meta.piece_count:
                hungry.append(pid)
                break
    if not hungry:
        return set()
    start = node.rotation % len(hungry)
    node.rotation += slots
    return {hungry[(start + i) % len(hungry)] for i in range(min(slots, len(hungry)))}


def _apply_chokes(node: Node, chosen: set[int], env):
    for pid in sorted(node.links):
        link = node.links[pid]
        want_unchoked = pid in chosen
        if link.am_choking == (not want_unchoked):
            continue
        link.am_choking = not want_unchoked
        if want_unchoked:
            node.unchoked.add(pid)
            env.trace(node.id, "unchoke", peer=pid)
            env.send(node.id, pid, (MSG_UNCHOKE,))
        else:
            node.unchoked.discard(pid)
            link.pending.clear()
            env.trace(node.id, "choke", peer=pid)
            env.send(node.id, pid, (MSG_CHOKE,))
    try_start_upload(node, env)


def _snub_sweep(node: Node, env):
    """Snub peers that claim to serve us but sit on old requests."""
    now = env.now
    timeout = env.scenario.durations.snub_timeout_s
    for pid in sorted(node.links):
        link = node.links[pid]
        if link.peer_choking or not link.outstanding:
            continue
        if now - min(link.outstanding.values()) > timeout:
            link.snubbed_until = now + env.scenario.durations.snub_duration_s
            for key in link.outstanding:
                node.requested.pop(key, None)
                node.requested_masks[key[0]] = node.requested_masks.get(key[0], 0) & ~(1 << key[1])
            link.outstanding.clear()


def _top_up_requests(node: Node, env):
    for pid in sorted(node.links):
        issue_requests(node, node.links[pid], env)


def update_active_set(node: Node, env) -> tuple[int, int] | None:
    """Swap the least valuable torrent for a better candidate, if any.

    With probability epsilon_random a random known torrent is cycled in
    unconditionally. The native interest is eligible to be dropped.
    """
    if node.phase != TRADING:
        return None
    known = set(env.dht.torrent_list())
    for link in node.links.values():
        known.update(link.info.advertised)
    candidates = sorted(known - set(node.active))
    if not candidates:
        return None
    forced = try_native_reacquire(node, env)
    if forced is not None:
        return forced
    vals = node.value_torrents(env, sorted(set(candidates) | set(node.active)))
    active_ranked = rank_torrents([vals[t] for t in node.active])
    least = active_ranked[-1]
    native_missing = node.native is not None and node.native not in node.active \
        and node.native in known
    eps_fired = env.rng.random() < env.params.epsilon_random
    if eps_fired:
        # the random cycle doubles as the way a node rotates its native
        # interest back into activity
        if native_missing:
            cand = node.native
        else:
            cand = candidates[env.rng.randrange(len(candidates))]
    else:
        cand = rank_torrents([vals[t] for t in candidates])[0]
    if not eps_fired and vals[cand].V <= vals[least].V:
        return None
    _swap_torrent(node, least, cand, env)
    return (least, cand)


def _covers_exhausted(node: Node) -> bool:
    """True when current actives offer no further download progress toward k."""
    if len(node.download_set) >= node.k:
        return True
    return all(t in node.download_set for t in node.active)


def try_native_reacquire(node: Node, env) -> tuple[int, int] | None:
    """Swap the native back in once the current set has nothing left to give.

    A node cannot depart without its native; once its covers are exhausted,
    waiting serves no purpose, so the reacquisition is immediate.
    """
    if node.phase != TRADING or node.native is None:
        return None
    if node.native in node.active or not _covers_exhausted(node):
        return None
    if node.native not in env.dht.torrents:
        return None
    vals = node.value_torrents(env, list(node.active))
    least = rank_torrents(vals.values())[-1]
    _swap_torrent(node, least, node.native, env)
    return (least, node.native)


def _swap_torrent(node: Node, dropped: int, added: int, env):
    node.active.swap(dropped, added)
    env.dht.drop_torrent(node.id, dropped)
    env.dht.active(node.id, added, env.now)
    env.trace(node.id, "active_set_change", torrent=dropped, bytes=0)
    env.trace(node.id, "active_set_change", torrent=added, bytes=1)
    node.rarity.pop(dropped, None)
    node._rarity_rebuild(env, added)
    for key in [k for k in node.requested if k[0] == dropped]:
        pid = node.requested.pop(key)
        link = node.links.get(pid)
        if link is not None:
            link.outstanding.pop(key, None)
        node.requested_masks[dropped] = 0
    for pid in sorted(node.links):
        other = env.node(pid)
        if other is not None:
            rehandshake(node, other, env)
    node.mark_topology_change()
    if not any(added in link.shared for link in node.links.values()):
        _connect_for_torrent(node, added, env)
    _top_up_requests(node, env)


def _connect_for_torrent(node: Node, torrent: int, env):
    env.trace(node.id, "dht_query", torrent=torrent)
    count = 0
    for pid in env.dht.peers_list(torrent, env.params.peers_request, env.rng,
                                  exclude=node.id):
        if count >= max(2, env.params.neighborhood // max(1, node.k)):
            break
        if pid in node.links or len(node.links) >= env.params.max_links:
            continue
        other = env.node(pid)
        if other is None or other.phase in (JOINING, DEPARTED):
            continue
        connect_peer(node, other, env)
        link = node.links.get(pid)
        if link is not None and torrent in link.shared:
            count += 1


def maybe_depart(node: Node, env) -> str:
    """Enter seeding/departure once k downloads include the native interest."""
    if node.phase != TRADING or node.role != CLIENT:
        return node.phase
    if len(node.download_set) >= node.k and node.native in node.download_set:
        node.phase = SEEDING
        env.schedule_depart(node.id, env.now + env.scenario.durations.seed_linger_s)
    return node.phase
