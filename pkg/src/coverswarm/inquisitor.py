"""Attack models: trace-consuming adversaries guessing native interests.

Attackers are built from filtered views that structurally exclude ground
truth annotations (is_native, dcx never enter the view objects). Guesses are
scored against the scenario's native map afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .metrics import R_KIND, R_NODE, R_TIME, R_TORRENT, natives_of, piece_count_of

FULLY_PASSIVE = "fully_passive"
DECOY_PASSIVE = "decoy_passive"

PASSIVE_STRATEGIES = ("first_joined", "longest_membership", "last_dropped")
DECOY_STRATEGIES = ("max_have_rate", "earliest_start", "earliest_finish")


@dataclass
class AttackReport:
    attacker_kind: str
    strategy: str
    # victim -> (guess, truth, correct)
    guesses: dict[int, tuple[int, int, bool]] = field(default_factory=dict)
    accuracy: float = 0.0
    baseline: float = 0.0

    def score(self, natives: dict[int, int], k: int, raw: dict[int, int]):
        for victim in sorted(raw):
            truth = natives.get(victim)
            if truth is None:
                continue
            guess = raw[victim]
            self.guesses[victim] = (guess, truth, guess == truth)
        n = len(self.guesses)
        self.accuracy = (sum(1 for _, _, ok in self.guesses.values() if ok) / n
                         if n else 0.0)
        self.baseline = 1.0 / k
        return self


# -- fully passive: periodic directory observation ---------------------------


def dht_observation_log(trace) -> list[tuple[float, dict[int, set[int]]]]:
    """The sweep series a directory-scraping observer records."""
    log = []
    for when, snap in trace.summary["dht_snapshots"]:
        log.append((when, {int(t): set(members) for t, members in snap.items()}))
    return log


def passive_attack(observation_log, victims, natives: dict[int, int], k: int,
                   strategy: str) -> AttackReport:
    """Guess each victim's native interest from its membership history."""
    if strategy not in PASSIVE_STRATEGIES:
        raise ValueError(f"unknown passive strategy: {strategy}")
    first_seen: dict[int, dict[int, int]] = {}
    last_seen: dict[int, dict[int, int]] = {}
    sweeps: dict[int, dict[int, int]] = {}
    for idx, (_when, snap) in enumerate(observation_log):
        for torrent, members in snap.items():
            for node in members:
                f = first_seen.setdefault(node, {})
                if torrent not in f:
                    f[torrent] = idx
                last_seen.setdefault(node, {})[torrent] = idx
                s = sweeps.setdefault(node, {})
                s[torrent] = s.get(torrent, 0) + 1
    raw: dict[int, int] = {}
    for victim in victims:
        if victim not in first_seen:
            continue  # never observed
        if strategy == "first_joined":
            table = first_seen[victim]
            raw[victim] = min(sorted(table), key=lambda t: (table[t], t))
        elif strategy == "longest_membership":
            table = sweeps[victim]
            raw[victim] = min(sorted(table), key=lambda t: (-table[t], t))
        else:  # last_dropped
            table = last_seen[victim]
            raw[victim] = min(sorted(table), key=lambda t: (-table[t], t))
    return AttackReport(FULLY_PASSIVE, strategy).score(natives, k, raw)


# -- decoy passive: Have announcements from a (sybil) neighbor ----------------


@dataclass
class VictimView:
    """What a piece-less neighbor accumulates about one victim."""

    victim: int
    haves: list[tuple[float, int]] = field(default_factory=list)


def decoy_views(trace, victims) -> dict[int, VictimView]:
    """Worst-case continuous observation: the victim's full Have history."""
    wanted = set(victims)
    views = {v: VictimView(v) for v in sorted(wanted)}
    for rec in trace.records:
        if rec[R_KIND] == "have_sent" and rec[R_NODE] in wanted:
            views[rec[R_NODE]].haves.append((rec[R_TIME], rec[R_TORRENT]))
    return views


def decoy_attack(views: dict[int, VictimView], natives: dict[int, int], k: int,
                 piece_count: int, strategy: str) -> AttackReport:
    if strategy not in DECOY_STRATEGIES:
        raise ValueError(f"unknown decoy strategy: {strategy}")
    raw: dict[int, int] = {}
    for victim, view in sorted(views.items()):
        if not view.haves:
            continue
        counts: dict[int, int] = {}
        first: dict[int, float] = {}
        finish: dict[int, float] = {}
        for when, torrent in view.haves:
            counts[torrent] = counts.get(torrent, 0) + 1
            if torrent not in first:
                first[torrent] = when
            if counts[torrent] == piece_count:
                finish[torrent] = when
        if strategy == "max_have_rate":
            raw[victim] = min(sorted(counts), key=lambda t: (-counts[t], t))
        elif strategy == "earliest_start":
            raw[victim] = min(sorted(first), key=lambda t: (first[t], t))
        else:  # earliest_finish
            table = finish if finish else {t: max(w for w, tt in view.haves if tt == t)
                                           for t in counts}
            raw[victim] = min(sorted(table), key=lambda t: (table[t], t))
    return AttackReport(DECOY_PASSIVE, strategy).score(natives, k, raw)


def run_all_attacks(trace) -> list[AttackReport]:
    """Every implemented strategy against every client in one run."""
    natives = natives_of(trace)
    k = trace.summary["scenario"]["k"]
    victims = sorted(natives)
    log = dht_observation_log(trace)
    pieces = piece_count_of(trace)
    views = decoy_views(trace, victims)
    reports = [passive_attack(log, victims, natives, k, s)
               for s in PASSIVE_STRATEGIES]
    reports += [decoy_attack(views, natives, k, pieces, s)
                for s in DECOY_STRATEGIES]
    return reports
