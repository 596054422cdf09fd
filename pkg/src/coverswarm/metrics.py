"""Evaluation statistics over run traces: ranks, traffic patterns, costs.

All functions are pure over trace records; recomputation from stored traces
gives identical results. Standard deviations are population deviations
(divide by n), which stay defined for single-member groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# record tuple layout (matches engine.TRACE_FIELDS)
R_TIME, R_NODE, R_KIND, R_TORRENT, R_PEER, R_BYTES, R_NATIVE, R_DCX = range(8)


def _mean_std(values) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


@dataclass
class RankStats:
    group: object
    mean: float
    std: float
    n: int


def piece_count_of(trace) -> int:
    scn = trace.summary["scenario"]
    return scn["file_bytes"] // scn["piece_bytes"]


def client_ids(trace) -> list[int]:
    return sorted(int(pid) for pid in trace.summary["natives"])


def natives_of(trace) -> dict[int, int]:
    return {int(pid): t for pid, t in trace.summary["natives"].items()}


def start_ranks(trace) -> dict[tuple[int, int], int]:
    """Rank torrents per node by the node's first piece request."""
    order: dict[int, list[int]] = {}
    for rec in trace.records:
        if rec[R_KIND] == "request_sent":
            seq = order.setdefault(rec[R_NODE], [])
            if rec[R_TORRENT] not in seq:
                seq.append(rec[R_TORRENT])
    ranks = {}
    for node, seq in order.items():
        for i, torrent in enumerate(seq):
            ranks[(node, torrent)] = i + 1
    return ranks


def completion_times(trace) -> dict[tuple[int, int], float]:
    """Completion instant per (node, torrent), via distinct-piece announcements."""
    pieces = piece_count_of(trace)
    counts: dict[tuple[int, int], int] = {}
    done: dict[tuple[int, int], float] = {}
    for rec in trace.records:
        if rec[R_KIND] == "have_sent":
            key = (rec[R_NODE], rec[R_TORRENT])
            c = counts.get(key, 0) + 1
            counts[key] = c
            if c == pieces:
                done[key] = rec[R_TIME]
    return done


def end_ranks(trace) -> dict[tuple[int, int], int]:
    """Rank torrents per node by completion order."""
    done = completion_times(trace)
    by_node: dict[int, list[tuple[float, int]]] = {}
    for (node, torrent), when in done.items():
        by_node.setdefault(node, []).append((when, torrent))
    ranks = {}
    for node, seq in by_node.items():
        seq.sort()
        for i, (_, torrent) in enumerate(seq):
            ranks[(node, torrent)] = i + 1
    return ranks


def rank_by_popularity(ranks: dict, natives: dict[int, int],
                       popularity: dict[int, int]) -> list[RankStats]:
    """Mean/stddev of native-interest ranks, grouped by torrent popularity."""
    groups: dict[int, list[int]] = {}
    for node, native in natives.items():
        rank = ranks.get((node, native))
        if rank is not None:
            groups.setdefault(popularity[native], []).append(rank)
    out = []
    for pop in sorted(groups):
        mean, std = _mean_std(groups[pop])
        out.append(RankStats(group=pop, mean=mean, std=std, n=len(groups[pop])))
    return out


def rank_populations(ranks: dict, natives: dict[int, int]) -> dict[int, tuple[list, list]]:
    """Per torrent: (native ranks, cover ranks) across nodes."""
    pops: dict[int, tuple[list, list]] = {}
    for (node, torrent), rank in ranks.items():
        native = natives.get(node)
        if native is None:
            continue
        nat, cov = pops.setdefault(torrent, ([], []))
        (nat if torrent == native else cov).append(rank)
    return pops


@dataclass
class WithinSigma:
    key: object
    native_mean: float
    native_std: float
    native_n: int
    cover_mean: float
    cover_std: float
    cover_n: int
    within: bool


def native_vs_cover(populations: dict) -> list[WithinSigma]:
    """Within-one-stddev verdicts; keys lacking either population are skipped."""
    out = []
    for key in sorted(populations):
        nat, cov = populations[key]
        if not nat or not cov:
            continue
        nat_mean, nat_std = _mean_std(nat)
        cov_mean, cov_std = _mean_std(cov)
        out.append(WithinSigma(key, nat_mean, nat_std, len(nat), cov_mean,
                               cov_std, len(cov),
                               abs(nat_mean - cov_mean) <= cov_std))
    return out


# -- traffic patterns ---------------------------------------------------------


@dataclass
class PatternSlices:
    view: str
    bucket: float
    # slice -> (native samples, cover samples), one sample per node/observer
    samples: dict[int, tuple[list, list]]
    raw_native_bytes: int
    raw_cover_bytes: int

    def stats(self) -> list[WithinSigma]:
        return native_vs_cover(self.samples)


def _lifetimes(trace) -> dict[int, tuple[float, float]]:
    joins: dict[int, float] = {}
    ends: dict[int, float] = {}
    last = trace.summary["end_time"]
    for rec in trace.records:
        if rec[R_KIND] == "join":
            joins[rec[R_NODE]] = rec[R_TIME]
        elif rec[R_KIND] == "depart":
            ends[rec[R_NODE]] = rec[R_TIME]
    return {n: (t0, ends.get(n, last)) for n, t0 in joins.items()}


def download_patterns(trace, bucket: float = 500.0, view: str = "global") -> PatternSlices:
    """Per-slice native vs cover volume; cover is averaged per cover slot.

    A node carries one native flow and k-1 cover slots, so cover bytes are
    divided by k-1 to compare per-torrent volumes. global: one sample per
    client per slice, from its own downloads, slices counted from its join.
    per_client_observed: one sample per observer per slice, restricted to
    transfers the observer uploaded, bucketed in each downloader's
    join-relative timeline.
    """
    if bucket <= 0:
        raise ValueError("bucket must be positive")
    lifetimes = _lifetimes(trace)
    natives = natives_of(trace)
    cover_slots = max(1, trace.summary["scenario"]["k"] - 1)
    vol: dict[int, dict[int, list[int]]] = {}
    raw_native = 0
    raw_cover = 0
    for rec in trace.records:
        if rec[R_KIND] != "piece_received":
            continue
        downloader = rec[R_NODE]
        if downloader not in lifetimes:
            continue
        owner = downloader if view == "global" else rec[R_PEER]
        if owner is None:
            continue
        s = int((rec[R_TIME] - lifetimes[downloader][0]) // bucket)
        cell = vol.setdefault(owner, {}).setdefault(s, [0, 0])
        if rec[R_NATIVE]:
            cell[0] += rec[R_BYTES]
            raw_native += rec[R_BYTES]
        else:
            cell[1] += rec[R_BYTES]
            raw_cover += rec[R_BYTES]
    samples: dict[int, tuple[list, list]] = {}
    if view == "global":
        owners = [n for n in lifetimes if n in natives]
    else:
        owners = sorted(vol)
    for owner in owners:
        cells = vol.get(owner, {})
        if view == "global":
            t0, t1 = lifetimes[owner]
            max_slice = int((t1 - t0) // bucket)
        elif cells:
            max_slice = max(cells)
        else:
            continue
        for s in range(max_slice + 1):
            nat_bytes, cov_bytes = cells.get(s, (0, 0))
            nat_list, cov_list = samples.setdefault(s, ([], []))
            nat_list.append(float(nat_bytes))
            cov_list.append(cov_bytes / cover_slots)
    return PatternSlices(view=view, bucket=bucket, samples=samples,
                         raw_native_bytes=raw_native, raw_cover_bytes=raw_cover)


# -- costs and trade structure ------------------------------------------------


@dataclass
class NodeCosts:
    node: int
    cost_to_acquire: float
    cost_to_complete: float


def costs(trace) -> tuple[list[NodeCosts], list[int]]:
    """Per departed client: download multiples of the native size.

    Returns (costs, excluded) where excluded lists clients that never departed.
    """
    natives = natives_of(trace)
    native_size = trace.summary["scenario"]["file_bytes"]
    pieces = piece_count_of(trace)
    downloaded: dict[int, int] = {}
    at_native_done: dict[int, int] = {}
    have_counts: dict[tuple[int, int], int] = {}
    departed: set[int] = set()
    for rec in trace.records:
        kind = rec[R_KIND]
        node = rec[R_NODE]
        if kind == "piece_received":
            downloaded[node] = downloaded.get(node, 0) + rec[R_BYTES]
        elif kind == "have_sent" and rec[R_NATIVE]:
            key = (node, rec[R_TORRENT])
            have_counts[key] = have_counts.get(key, 0) + 1
            if have_counts[key] == pieces:
                at_native_done[node] = downloaded.get(node, 0)
        elif kind == "depart":
            departed.add(node)
    out = []
    excluded = []
    for node in sorted(natives):
        if node not in departed:
            excluded.append(node)
            continue
        total = downloaded.get(node, 0)
        acquire = at_native_done.get(node, total)
        out.append(NodeCosts(node, acquire / native_size, total / native_size))
    return out, excluded


def transitive_fraction(trace) -> float:
    """Share of piece exchanges at cross-trading distance two or more."""
    total = 0
    transitive = 0
    for rec in trace.records:
        if rec[R_KIND] != "piece_received":
            continue
        total += 1
        if not rec[R_NATIVE] and (rec[R_DCX] is None or rec[R_DCX] >= 2):
            transitive += 1
    return transitive / total if total else 0.0


# -- per-run bundle -----------------------------------------------------------


@dataclass
class RunMetrics:
    seed: int
    converged: bool
    start: dict
    end: dict
    start_by_pop: list
    end_by_pop: list
    start_cmp: list
    end_cmp: list
    patterns: dict
    cost_rows: list
    excluded: list
    transitive: float

    @property
    def pct_within_1sigma(self) -> float:
        checks = [w.within for w in self.start_cmp] + [w.within for w in self.end_cmp]
        for view in ("global", "per_client_observed"):
            checks.extend(w.within for w in self.patterns[view].stats())
        return sum(checks) / len(checks) if checks else 0.0

    def cost_summary(self) -> tuple[float, float, float, float]:
        ctc = [c.cost_to_complete for c in self.cost_rows]
        cta = [c.cost_to_acquire for c in self.cost_rows]
        mc, sc = _mean_std(ctc)
        ma, sa = _mean_std(cta)
        return mc, sc, ma, sa


def compute_run_metrics(trace, bucket: float = 500.0) -> RunMetrics:
    natives = natives_of(trace)
    popularity = {int(t): c for t, c in trace.summary["popularity"].items()}
    start = start_ranks(trace)
    end = end_ranks(trace)
    cost_rows, excluded = costs(trace)
    return RunMetrics(
        seed=trace.summary["seed"],
        converged=trace.summary["converged"],
        start=start,
        end=end,
        start_by_pop=rank_by_popularity(start, natives, popularity),
        end_by_pop=rank_by_popularity(end, natives, popularity),
        start_cmp=native_vs_cover(rank_populations(start, natives)),
        end_cmp=native_vs_cover(rank_populations(end, natives)),
        patterns={v: download_patterns(trace, bucket, v)
                  for v in ("global", "per_client_observed")},
        cost_rows=cost_rows,
        excluded=excluded,
        transitive=transitive_fraction(trace),
    )


# -- pooling across runs ------------------------------------------------------


def pool_rank_populations(traces, which: str = "start") -> dict:
    pooled: dict[int, tuple[list, list]] = {}
    for trace in traces:
        ranks = start_ranks(trace) if which == "start" else end_ranks(trace)
        for torrent, (nat, cov) in rank_populations(ranks, natives_of(trace)).items():
            pnat, pcov = pooled.setdefault(torrent, ([], []))
            pnat.extend(nat)
            pcov.extend(cov)
    return pooled


def pool_popularity_ranks(traces, which: str = "start") -> list[RankStats]:
    groups: dict[int, list[int]] = {}
    for trace in traces:
        natives = natives_of(trace)
        popularity = {int(t): c for t, c in trace.summary["popularity"].items()}
        ranks = start_ranks(trace) if which == "start" else end_ranks(trace)
        for node, native in natives.items():
            rank = ranks.get((node, native))
            if rank is not None:
                groups.setdefault(popularity[native], []).append(rank)
    return [RankStats(group=pop, mean=_mean_std(vals)[0], std=_mean_std(vals)[1],
                      n=len(vals))
            for pop, vals in sorted(groups.items())]


def pool_patterns(traces, bucket: float = 500.0, view: str = "global") -> PatternSlices:
    pooled: dict[int, tuple[list, list]] = {}
    raw_native = 0
    raw_cover = 0
    for trace in traces:
        ps = download_patterns(trace, bucket, view)
        raw_native += ps.raw_native_bytes
        raw_cover += ps.raw_cover_bytes
        for s, (nat, cov) in ps.samples.items():
            pnat, pcov = pooled.setdefault(s, ([], []))
            pnat.extend(nat)
            pcov.extend(cov)
    return PatternSlices(view=view, bucket=bucket, samples=pooled,
                         raw_native_bytes=raw_native, raw_cover_bytes=raw_cover)


# -- CSV export ---------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def _write_csv(path, header: list[str], rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_ranks_csv(path, rm: RunMetrics, trace):
    natives = natives_of(trace)
    popularity = {int(t): c for t, c in trace.summary["popularity"].items()}
    keys = sorted(set(rm.start) | set(rm.end))
    rows = []
    for node, torrent in keys:
        rows.append((node, torrent, torrent == natives.get(node),
                     rm.start.get((node, torrent)), rm.end.get((node, torrent)),
                     popularity.get(torrent, 0)))
    _write_csv(path, ["node", "torrent", "is_native", "start_rank", "end_rank",
                      "popularity"], rows)


def write_patterns_csv(path, patterns: dict):
    rows = []
    for view in ("global", "per_client_observed"):
        ps = patterns.get(view)
        if ps is None:
            continue
        for w in ps.stats():
            rows.append((view, w.key, "native", w.native_mean, w.native_std))
            rows.append((view, w.key, "cover", w.cover_mean, w.cover_std))
    _write_csv(path, ["view", "slice", "population", "mean_bytes", "std_bytes"], rows)


def write_costs_csv(path, cost_rows: list):
    rows = [(c.node, c.cost_to_acquire, c.cost_to_complete)
            for c in sorted(cost_rows, key=lambda c: c.node)]
    _write_csv(path, ["node", "cost_to_acquire", "cost_to_complete"], rows)


def write_summary_csv(path, per_run: list):
    header = ["run", "converged", "mean_ctc", "std_ctc", "mean_cta", "std_cta",
              "transitive_fraction", "pct_within_1sigma"]
    rows = []
    for rm in per_run:
        mc, sc, ma, sa = rm.cost_summary()
        rows.append((rm.seed, rm.converged, mc, sc, ma, sa, rm.transitive,
                     rm.pct_within_1sigma))
    _write_csv(path, header, rows)


def write_rankstats_csv(path, start_by_pop, end_by_pop, start_cmp, end_cmp):
    header = ["metric", "grouping", "group", "population", "mean", "std", "n",
              "within_1sigma"]
    rows = []
    for metric, stats in (("start", start_by_pop), ("end", end_by_pop)):
        for rs in stats:
            rows.append((metric, "popularity", rs.group, "native", rs.mean,
                         rs.std, rs.n, None))
    for metric, cmps in (("start", start_cmp), ("end", end_cmp)):
        for w in cmps:
            rows.append((metric, "torrent", w.key, "native", w.native_mean,
                         w.native_std, w.native_n, w.within))
            rows.append((metric, "torrent", w.key, "cover", w.cover_mean,
                         w.cover_std, w.cover_n, w.within))
    _write_csv(path, header, rows)


def write_attacks_csv(path, reports: list):
    header = ["attacker_kind", "strategy", "victim", "guess", "truth",
              "correct", "accuracy", "baseline"]
    rows = []
    for rep in reports:
        for victim in sorted(rep.guesses):
            guess, truth, correct = rep.guesses[victim]
            rows.append((rep.attacker_kind, rep.strategy, victim, guess, truth,
                         correct, None, None))
        rows.append((rep.attacker_kind, rep.strategy, "aggregate", None, None,
                     None, rep.accuracy, rep.baseline))
    _write_csv(path, header, rows)
