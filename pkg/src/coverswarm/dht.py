"""Idealized global directory: torrent list, per-torrent membership, heartbeats.

Lookups are synchronous with zero latency and zero bandwidth cost; the
simulation engine is the single writer.
"""

from __future__ import annotations


class UnknownTorrent(KeyError):
    pass


class DhtState:
    __slots__ = ("torrents", "membership", "expiry_window")

    def __init__(self, expiry_window: float):
        self.torrents: set[int] = set()
        # torrent -> {node -> last heartbeat time}
        self.membership: dict[int, dict[int, float]] = {}
        self.expiry_window = expiry_window

    def publish(self, torrent: int):
        self.torrents.add(torrent)
        self.membership.setdefault(torrent, {})

    def torrent_list(self) -> list[int]:
        return sorted(self.torrents)

    def peers_list(self, torrent: int, max_n: int, rng, exclude: int | None = None) -> list[int]:
        """Uniform random subset (without replacement) of current members.

        The requester never appears in its own answer.
        """
        if torrent not in self.torrents:
            raise UnknownTorrent(f"torrent not advertised: {torrent}")
        members = sorted(self.membership[torrent])
        if exclude is not None and exclude in self.membership[torrent]:
            members.remove(exclude)
        if len(members) <= max_n:
            rng.shuffle(members)
            return members
        return rng.sample(members, max_n)

    def active(self, node: int, torrent: int, now: float):
        if torrent not in self.torrents:
            raise UnknownTorrent(f"torrent not advertised: {torrent}")
        self.membership[torrent][node] = now

    def drop_torrent(self, node: int, torrent: int):
        self.membership.get(torrent, {}).pop(node, None)

    def expire(self, now: float) -> int:
        """Remove every entry whose heartbeat is older than the expiry window."""
        removed = 0
        for members in self.membership.values():
            stale = [n for n, t in members.items() if now - t > self.expiry_window]
            for n in stale:
                del members[n]
            removed += len(stale)
        return removed

    def members(self, torrent: int) -> list[int]:
        return sorted(self.membership.get(torrent, ()))

    def snapshot(self) -> dict[int, list[int]]:
        """Full membership view, as a periodic observer would record it."""
        return {t: sorted(m) for t, m in sorted(self.membership.items()) if m}
