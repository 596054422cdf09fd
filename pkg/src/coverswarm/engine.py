"""Deterministic discrete-event loop with a max-min fair fluid bandwidth model.

One Engine instance owns one run: clock, event heap, rng, DHT, bandwidth
state, nodes and trace. Identical (scenario, seed) pairs produce identical
traces byte for byte.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import node as nd
from .dht import DhtState
from .model import (CLIENT, DEPARTED, SEED, SEEDING, ActiveSet, PieceBitfield,
                    ScenarioError, TorrentMeta, ValidatedScenario,
                    assign_natives, popularity_counts)

EV_JOIN = "node_join"
EV_DELIVER = "deliver_message"
EV_TRANSFER = "transfer_complete"
EV_UNCHOKE = "unchoke_tick"
EV_ACTIVESET = "active_set_tick"
EV_HEARTBEAT = "heartbeat_tick"
EV_EXPIRE = "dht_expire_tick"
EV_DEPART = "node_depart"

TRACE_FIELDS = ("time", "node", "kind", "torrent", "peer", "bytes", "is_native", "dcx")


class Transfer:
    __slots__ = ("tid", "src", "dst", "torrent", "piece", "remaining", "rate",
                 "last", "version")

    def __init__(self, tid, src, dst, torrent, piece, nbytes, now):
        self.tid = tid
        self.src = src
        self.dst = dst
        self.torrent = torrent
        self.piece = piece
        self.remaining = float(nbytes)
        self.rate = 0.0
        self.last = now
        self.version = 0


class BandwidthState:
    """Active fluid transfers plus per-node capacity limits (bits/second)."""

    def __init__(self, up_bps: float, down_bps: float):
        self.up_bps = float(up_bps)
        self.down_bps = float(down_bps)
        self.overrides: dict[int, tuple[float, float]] = {}
        self.transfers: dict[int, Transfer] = {}
        # receiver -> active transfer ids into it
        self.incoming: dict[int, list[int]] = {}

    def set_caps(self, node: int, up_bps: float, down_bps: float):
        self.overrides[node] = (float(up_bps), float(down_bps))

    def up_cap(self, node: int) -> float:
        pair = self.overrides.get(node)
        return pair[0] if pair is not None else self.up_bps

    def down_cap(self, node: int) -> float:
        pair = self.overrides.get(node)
        return pair[1] if pair is not None else self.down_bps

    def add(self, tr: Transfer):
        self.transfers[tr.tid] = tr
        self.incoming.setdefault(tr.dst, []).append(tr.tid)

    def remove(self, tid: int) -> Transfer:
        tr = self.transfers.pop(tid)
        peers = self.incoming[tr.dst]
        peers.remove(tid)
        if not peers:
            del self.incoming[tr.dst]
        return tr


def star_rates(bw: BandwidthState, dst: int) -> dict[int, float]:
    """Max-min rates for the flows into one receiver.

    Senders hold at most one active upload each, so receivers form
    independent stars: water-fill the receiver capacity over flows capped by
    their sender's uplink. Equals allocate_bandwidth restricted to the star.
    """
    tids = bw.incoming.get(dst, ())
    if not tids:
        return {}
    flows = sorted(((bw.up_cap(bw.transfers[t].src), t) for t in tids))
    remaining = bw.down_cap(dst)
    left = len(flows)
    rates = {}
    for cap, tid in flows:
        share = remaining / left
        rate = cap if cap < share else share
        rates[tid] = rate
        remaining -= rate
        left -= 1
    return rates


def allocate_bandwidth(bw: BandwidthState) -> dict[int, float]:
    """Progressive-filling max-min fair rates for every active transfer.

    All unfrozen flows rise together; whenever an endpoint saturates, its
    flows freeze at the current level. Deterministic given the transfer set.
    """
    transfers = bw.transfers
    if not transfers:
        return {}
    rem: dict[tuple[int, int], float] = {}
    deg: dict[tuple[int, int], int] = {}
    for tr in transfers.values():
        up, dn = (tr.src, 0), (tr.dst, 1)
        if up not in rem:
            rem[up] = bw.up_cap(tr.src)
        if dn not in rem:
            rem[dn] = bw.down_cap(tr.dst)
        deg[up] = deg.get(up, 0) + 1
        deg[dn] = deg.get(dn, 0) + 1
    rates: dict[int, float] = {}
    unfrozen = sorted(transfers)
    while unfrozen:
        level = min(rem[key] / deg[key] for key, n in deg.items() if n > 0)
        sat = {key for key, n in deg.items() if n > 0 and rem[key] / n <= level * (1 + 1e-12)}
        frozen = []
        for tid in unfrozen:
            tr = transfers[tid]
            if (tr.src, 0) in sat or (tr.dst, 1) in sat:
                rates[tid] = level
                frozen.append(tid)
        if not frozen:
            for tid in unfrozen:
                rates[tid] = level
            break
        for tid in frozen:
            tr = transfers[tid]
            for key in ((tr.src, 0), (tr.dst, 1)):
                rem[key] = max(0.0, rem[key] - level)
                deg[key] -= 1
        unfrozen = [tid for tid in unfrozen if tid not in rates]
    return rates


@dataclass
class RunTrace:
    """Everything one run produced: ordered records plus sidecar metadata."""

    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def iter_records(self):
        return iter(self.records)


class Engine:
    """Owns one simulation run; also serves as the Env surface for nodes."""

    def __init__(self, scenario: ValidatedScenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self._seq = 0
        self._heap: list = []
        self.dht = DhtState(scenario.durations.expiry_window_s)
        self.bw = BandwidthState(scenario.up_bps, scenario.down_bps)
        self.nodes: dict[int, nd.Node] = {}
        self.records: list = []
        self.natives: dict[int, int] = {}
        self.metas: dict[int, TorrentMeta] = {}
        self.violations: dict[str, int] = {}
        self.notes: dict[str, int] = {}
        self.handshakes: dict[tuple[int, int, int, int], int] = {}
        self.dht_snapshots: list = []
        self.clients_alive = 0
        self._next_tid = 0
        self.weights = scenario.weights
        self.params = scenario.node

    # -- env surface used by node.py ---------------------------------------

    @property
    def piece_count(self) -> int:
        return self.scenario.piece_count

    def meta(self, torrent: int) -> TorrentMeta:
        return self.metas[torrent]

    def node(self, pid: int):
        return self.nodes.get(pid)

    def trace(self, node_id: int, kind: str, torrent=None, peer=None, bytes=None, dcx=None):
        native = self.nodes[node_id].native
        is_native = torrent is not None and torrent == native
        self.records.append((self.now, node_id, kind, torrent, peer, bytes,
                             is_native, dcx))

    def send(self, src: int, dst: int, msg: tuple):
        self._push(self.now + self.scenario.durations.control_latency_s,
                   EV_DELIVER, (src, dst, msg))

    def broadcast_have(self, src: int, torrent: int, piece: int):
        self.trace(src, "have_sent", torrent=torrent,
                   bytes=self.scenario.piece_bytes)
        self._push(self.now + self.scenario.durations.control_latency_s,
                   EV_DELIVER, (src, None, (nd.MSG_HAVE, torrent, piece)))

    def start_transfer(self, src: int, dst: int, torrent: int, piece: int) -> int:
        tid = self._next_tid
        self._next_tid += 1
        self.bw.add(Transfer(tid, src, dst, torrent, piece,
                             self.scenario.piece_bytes, self.now))
        self._retune_star(dst)
        return tid

    def cancel_pair_transfers(self, a: int, b: int):
        doomed = [tid for tid, tr in self.bw.transfers.items()
                  if (tr.src, tr.dst) in ((a, b), (b, a))]
        self._cancel(doomed)

    def cancel_node_transfers(self, pid: int):
        doomed = [tid for tid, tr in self.bw.transfers.items()
                  if pid in (tr.src, tr.dst)]
        self._cancel(doomed)

    def _cancel(self, doomed: list):
        if not doomed:
            return
        freed = []
        stars = set()
        for tid in doomed:
            tr = self.bw.remove(tid)
            stars.add(tr.dst)
            uploader = self.nodes.get(tr.src)
            if uploader is not None and uploader.current_upload == tid:
                uploader.current_upload = None
                freed.append(tr.src)
        for dst in sorted(stars):
            self._retune_star(dst)
        for pid in sorted(set(freed)):
            uploader = self.nodes[pid]
            if uploader.phase != DEPARTED:
                nd.try_start_upload(uploader, self)

    def schedule_depart(self, pid: int, when: float):
        self._push(when, EV_DEPART, pid)

    def record_handshake(self, ka: int, kb: int, overlap: int, pre_drop: int):
        if pre_drop != ka + kb - overlap:
            self.violations["handshake_count"] = self.violations.get("handshake_count", 0) + 1
        key = (ka, kb, overlap, pre_drop)
        self.handshakes[key] = self.handshakes.get(key, 0) + 1

    def count_violation(self, name: str):
        self.notes[name] = self.notes.get(name, 0) + 1

    # -- scheduling ---------------------------------------------------------

    def _push(self, when: float, kind: str, payload):
        self._seq += 1
        heapq.heappush(self._heap, (when, self._seq, kind, payload))

    def _retune_star(self, dst: int):
        """Recompute the max-min rates of one receiver's incoming flows.

        Senders hold one active upload each, so no other node's rates move.
        """
        rates = star_rates(self.bw, dst)
        now = self.now
        transfers = self.bw.transfers
        total = 0.0
        for tid, rate in rates.items():
            total += rate
            tr = transfers[tid]
            if rate > self.bw.up_cap(tr.src) * (1 + 1e-9):
                self.violations["bandwidth_cap"] = self.violations.get("bandwidth_cap", 0) + 1
            if rate == tr.rate:
                continue
            if tr.rate > 0.0:
                tr.remaining = max(0.0, tr.remaining - tr.rate * (now - tr.last) / 8.0)
            tr.last = now
            tr.rate = rate
            tr.version += 1
            if rate > 0.0:
                self._push(now + tr.remaining * 8.0 / rate, EV_TRANSFER,
                           (tid, tr.version))
        if total > self.bw.down_cap(dst) * (1 + 1e-9):
            self.violations["bandwidth_cap"] = self.violations.get("bandwidth_cap", 0) + 1

    # -- world setup ----------------------------------------------------------

    def spawn(self):
        scn = self.scenario
        for t in range(scn.torrents):
            self.metas[t] = scn.meta(t)
            self.dht.publish(t)
        self.natives = assign_natives(scn, self.rng)
        next_id = 0
        for cid in range(scn.clients):
            node = nd.Node(next_id, CLIENT, self.natives[cid], scn.k)
            self.nodes[next_id] = node
            next_id += 1
        self.clients_alive = scn.clients
        for t in range(scn.torrents):
            for _ in range(scn.seeds_per_torrent):
                seed = nd.Node(next_id, SEED, None, 1)
                seed.phase = SEEDING
                seed.active = ActiveSet(1, [t])
                seed.bitfields[t] = PieceBitfield(self.metas[t], complete=True)
                self.nodes[next_id] = seed
                self.dht.active(next_id, t, 0.0)
                if scn.seed_up_bps or scn.seed_down_bps:
                    self.bw.set_caps(next_id, scn.seed_up_bps or scn.up_bps,
                                     scn.seed_down_bps or scn.down_bps)
                next_id += 1
        durations = scn.durations
        for pid in sorted(self.nodes):
            node = self.nodes[pid]
            if node.role == CLIENT:
                when = (self.rng.uniform(0.0, durations.join_stagger_s)
                        if durations.join_stagger_s > 0 else 0.0)
                self._push(when, EV_JOIN, pid)
            else:
                self._push(self.rng.uniform(0.0, durations.unchoke_s), EV_UNCHOKE, pid)
                self._push(self.rng.uniform(0.0, durations.heartbeat_s), EV_HEARTBEAT, pid)
        self._push(durations.heartbeat_s, EV_EXPIRE, None)

    # -- event handlers ---------------------------------------------------

    def _on_join(self, pid: int):
        node = self.nodes[pid]
        nd.join(node, self)
        durations = self.scenario.durations
        self._push(self.now + self.rng.uniform(0.0, durations.unchoke_s), EV_UNCHOKE, pid)
        self._push(self.now + durations.active_set_s * self.rng.uniform(0.75, 1.25),
                   EV_ACTIVESET, pid)
        self._push(self.now + self.rng.uniform(0.0, durations.heartbeat_s), EV_HEARTBEAT, pid)

    def _on_deliver(self, payload):
        src, dst, msg = payload
        sender = self.nodes.get(src)
        if sender is None or sender.phase == DEPARTED:
            return
        if dst is not None:
            receiver = self.nodes.get(dst)
            if receiver is not None and receiver.phase != DEPARTED:
                nd.handle_message(receiver, src, msg, self)
            return
        torrent = msg[1]
        for pid in sorted(sender.links):
            if torrent in sender.links[pid].shared:
                receiver = self.nodes[pid]
                if receiver.phase != DEPARTED:
                    nd.handle_message(receiver, src, msg, self)

    def _on_transfer(self, payload):
        tid, version = payload
        tr = self.bw.transfers.get(tid)
        if tr is None or tr.version != version:
            return
        self.bw.remove(tid)
        self._retune_star(tr.dst)
        uploader = self.nodes.get(tr.src)
        if uploader is not None and uploader.current_upload == tid:
            uploader.current_upload = None
        receiver = self.nodes.get(tr.dst)
        if receiver is not None and receiver.phase != DEPARTED:
            nd.on_piece(receiver, tr.src, tr.torrent, tr.piece,
                        self.scenario.piece_bytes, self)
        if uploader is not None and uploader.phase != DEPARTED:
            nd.try_start_upload(uploader, self)

    def _on_unchoke_tick(self, pid: int):
        node = self.nodes[pid]
        if node.phase == DEPARTED:
            return
        nd.unchoke_round(node, self)
        self._push(self.now + self.scenario.durations.unchoke_s, EV_UNCHOKE, pid)

    def _on_activeset_tick(self, pid: int):
        node = self.nodes[pid]
        if node.phase == DEPARTED:
            return
        nd.update_active_set(node, self)
        if node.phase != DEPARTED:
            self._push(self.now + self.scenario.durations.active_set_s, EV_ACTIVESET, pid)

    def _on_heartbeat(self, pid: int):
        node = self.nodes[pid]
        if node.phase == DEPARTED:
            return
        if node.active is not None:
            for t in sorted(node.active):
                self.dht.active(pid, t, self.now)
        self._push(self.now + self.scenario.durations.heartbeat_s, EV_HEARTBEAT, pid)

    def _on_expire(self, _payload):
        self.dht.expire(self.now)
        self.dht_snapshots.append((self.now, self.dht.snapshot()))
        if self.clients_alive > 0:
            self._push(self.now + self.scenario.durations.heartbeat_s, EV_EXPIRE, None)

    def _on_depart(self, pid: int):
        node = self.nodes[pid]
        if node.phase == DEPARTED:
            return
        self.cancel_node_transfers(pid)
        for other_id in sorted(node.links):
            nd.teardown(node, self.nodes[other_id], self)
        if node.active is not None:
            for t in sorted(node.active):
                self.dht.drop_torrent(pid, t)
                self.trace(pid, "active_set_change", torrent=t, bytes=0)
        node.phase = DEPARTED
        self.trace(pid, "depart")
        if node.role == CLIENT:
            self.clients_alive -= 1

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunTrace:
        self.spawn()
        cap = self.scenario.durations.time_cap_s
        handlers = {
            EV_JOIN: self._on_join,
            EV_DELIVER: self._on_deliver,
            EV_TRANSFER: self._on_transfer,
            EV_UNCHOKE: self._on_unchoke_tick,
            EV_ACTIVESET: self._on_activeset_tick,
            EV_HEARTBEAT: self._on_heartbeat,
            EV_EXPIRE: self._on_expire,
            EV_DEPART: self._on_depart,
        }
        heap = self._heap
        while heap and self.clients_alive > 0:
            when, _seq, kind, payload = heapq.heappop(heap)
            if when > cap:
                self.now = cap
                break
            if when < self.now:
                raise AssertionError("time went backward")
            self.now = when
            handlers[kind](payload)
        converged = self.clients_alive == 0
        return self._finish(converged)

    def _finish(self, converged: bool) -> RunTrace:
        scn = self.scenario
        summary = {
            "seed": self.seed,
            "converged": converged,
            "end_time": self.now,
            "clients": scn.clients,
            "departed": scn.clients - self.clients_alive,
            "config_hash": scn.config_hash(),
            "scenario": asdict(scn.cfg),
            "natives": {str(pid): t for pid, t in sorted(self.natives.items())},
            "popularity": {str(t): c for t, c in
                           sorted(popularity_counts(self.natives, scn.torrents).items())},
            "violations": dict(sorted(self.violations.items())),
            "notes": dict(sorted(self.notes.items())),
            "handshakes": [[*key, count] for key, count in sorted(self.handshakes.items())],
            "dht_snapshots": [[when, {str(t): members for t, members in snap.items()}]
                              for when, snap in self.dht_snapshots],
            "record_count": len(self.records),
        }
        return RunTrace(records=self.records, summary=summary)


def run(scenario: ValidatedScenario, seed: int) -> RunTrace:
    """Execute one full simulation; the sole entry point for a run."""
    return Engine(scenario, seed).run()


# -- trace serialization ------------------------------------------------------


def write_run(trace: RunTrace, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.jsonl", "w") as fh:
        for rec in trace.records:
            obj = {}
            for key, value in zip(TRACE_FIELDS, rec):
                if value is not None and not (key == "is_native" and rec[3] is None):
                    obj[key] = value
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    with open(out / "summary.json", "w") as fh:
        json.dump(trace.summary, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_run(run_dir: str | Path) -> RunTrace:
    run_dir = Path(run_dir)
    records = []
    path = run_dir / "trace.jsonl"
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(tuple(obj.get(f, False if f == "is_native" else None)
                                     for f in TRACE_FIELDS))
            except (ValueError, KeyError) as exc:
                raise ScenarioError(f"corrupt trace record at {path}:{lineno}: {exc}")
    with open(run_dir / "summary.json") as fh:
        summary = json.load(fh)
    return RunTrace(records=records, summary=summary)
