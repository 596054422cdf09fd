import random

import pytest
from hypothesis import given, strategies as st

from conftest import FakeEnv
from coverswarm import node as nd
from coverswarm.model import CLIENT, SEED, SEEDING, TRADING, ActiveSet, PieceBitfield


def make_client(env, pid, native, active, pieces_done=None):
    node = nd.Node(pid, CLIENT, native, env.scenario.k)
    node.active = ActiveSet(env.scenario.k, active)
    node.phase = TRADING
    for t in active:
        node.rarity[t] = [0] * env.piece_count
        if pieces_done and t in pieces_done:
            bf = PieceBitfield(env.meta(t))
            for p in range(pieces_done[t]):
                bf.set(p)
            node.bitfields[t] = bf
            if bf.complete:
                node.download_set[t] = 0.0
    env.nodes[pid] = node
    for t in active:
        env.dht.active(pid, t, 0.0)
    return node


# -- joining and handshakes ---------------------------------------------------


def test_join_includes_native_and_k_distinct():
    env = FakeEnv(k=3, torrents=8)
    node = nd.Node(1, CLIENT, 5, 3)
    env.nodes[1] = node
    nd.join(node, env)
    assert node.phase == TRADING
    assert len(node.active) == 3
    assert 5 in node.active
    assert len(set(node.active)) == 3


def test_join_k1_no_draws():
    env = FakeEnv(k=1, torrents=4)
    node = nd.Node(1, CLIENT, 2, 1)
    env.nodes[1] = node
    nd.join(node, env)
    assert list(node.active) == [2]


def test_join_late_start_can_exclude_native():
    env = FakeEnv(k=2, torrents=8)
    env.scenario.cfg.late_start = True
    # replay the same draw the node will make to freeze the expectation
    expected = random.Random(99).sample(sorted(range(8)), 2)
    node = nd.Node(1, CLIENT, expected[0] ^ 7, 2)  # native differs from draw
    native = node.native
    env.nodes[1] = node
    nd.join(node, env)
    assert sorted(node.active) == sorted(expected)
    if native not in expected:
        assert native not in node.active


def test_join_requires_k_torrents():
    env = FakeEnv(k=3, torrents=6)
    env.dht.torrents = {0, 1}
    env.dht.membership = {0: {}, 1: {}}
    node = nd.Node(1, CLIENT, 0, 3)
    env.nodes[1] = node
    with pytest.raises(Exception):
        nd.join(node, env)


def test_connect_single_overlap_counts():
    env = FakeEnv(k=5, torrents=12)
    a = make_client(env, 1, 0, [0, 1, 2, 3, 4])
    b = make_client(env, 2, 4, [4, 5, 6, 7, 8])
    pre = nd.connect_peer(a, b, env)
    assert pre == 9  # 2k-1
    assert sorted(a.links[2].shared) == [4]
    assert sorted(b.links[1].shared) == [4]


def test_connect_identical_sets():
    env = FakeEnv(k=5, torrents=12)
    a = make_client(env, 1, 0, [0, 1, 2, 3, 4])
    b = make_client(env, 2, 1, [0, 1, 2, 3, 4])
    pre = nd.connect_peer(a, b, env)
    assert pre == 5
    assert len(a.links[2].shared) == 5


def test_connect_disjoint_tears_down():
    env = FakeEnv(k=2, torrents=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 4, [4, 5])
    pre = nd.connect_peer(a, b, env)
    assert pre == 4
    assert 2 not in a.links and 1 not in b.links


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_connect_pre_drop_formula(ka, kb, data):
    universe = list(range(12))
    sa = data.draw(st.permutations(universe))[:ka]
    sb = data.draw(st.permutations(universe))[:kb]
    env = FakeEnv(k=6, torrents=12)
    a = nd.Node(1, CLIENT, sa[0], ka)
    a.active = ActiveSet(ka, sa)
    a.phase = TRADING
    b = nd.Node(2, CLIENT, sb[0], kb)
    b.active = ActiveSet(kb, sb)
    b.phase = TRADING
    env.nodes = {1: a, 2: b}
    pre = nd.connect_peer(a, b, env)
    assert pre == len(sa) + len(sb) - len(set(sa) & set(sb))


def test_handshake_exchanges_bitfields():
    env = FakeEnv(k=2, torrents=8, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [1, 2], pieces_done={1: 5})
    nd.connect_peer(a, b, env)
    assert a.links[2].info.view_counts[1] == 5
    assert a.rarity[1][0] == 1 and a.rarity[1][5] == 0


# -- neighborhood allocation ----------------------------------------------------


def test_largest_remainder_equal_split():
    assert nd._largest_remainder(20, [0.0] * 5) == [4, 4, 4, 4, 4]


def test_largest_remainder_exact_proportional():
    assert nd._largest_remainder(16, [4, 1, 1, 1, 1]) == [8, 2, 2, 2, 2]


def test_largest_remainder_tie_break():
    assert nd._largest_remainder(10, [1, 1, 1]) == [4, 3, 3]


def test_build_neighborhood_equal_split_at_join():
    env = FakeEnv(k=3, torrents=6)
    # a swarm of idle clients to draw from
    for pid in range(10, 40):
        make_client(env, pid, pid % 6, [pid % 6, (pid + 1) % 6, (pid + 2) % 6])
    node = make_client(env, 1, 0, [0, 1, 2])
    nd.build_neighborhood(node, env, 9)
    per_torrent = {t: sum(1 for link in node.links.values() if t in link.shared)
                   for t in (0, 1, 2)}
    assert all(c >= 3 for c in per_torrent.values())


# -- message handling -----------------------------------------------------------


def test_request_while_choking_counts_but_serves_nothing():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 8})
    b = make_client(env, 2, 1, [0, 1])
    nd.connect_peer(a, b, env)
    link = a.links[2]
    assert link.am_choking
    nd.handle_message(a, 2, (nd.MSG_REQUEST, 0, 3), env)
    assert a.request_counts[0] == 1
    assert not link.pending and not env.transfers


def test_request_while_unchoked_schedules_upload():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 8})
    b = make_client(env, 2, 1, [0, 1])
    nd.connect_peer(a, b, env)
    a.links[2].am_choking = False
    nd.handle_message(a, 2, (nd.MSG_REQUEST, 0, 3), env)
    assert env.transfers == [(1, 2, 0, 3)]
    assert a.current_upload is not None


def test_piece_completion_appends_download_set():
    env = FakeEnv(k=2, torrents=4, pieces=4)
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 3})
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 4})
    nd.connect_peer(a, b, env)
    env.now = 33.0
    nd.on_piece(a, 2, 0, 3, 65536, env)
    assert a.bitfields[0].complete
    assert a.download_set[0] == 33.0
    haves = [rec for rec in env.traced if rec[2] == "have_sent"]
    assert len(haves) == 1 and haves[0][3] == 0
    assert a.links[2].credit[0] == 65536


def test_unchoke_then_choke_clears_outstanding():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 8})
    nd.connect_peer(a, b, env)
    nd.handle_message(a, 2, (nd.MSG_UNCHOKE,), env)
    link = a.links[2]
    assert len(link.outstanding) == 4  # pipeline filled
    assert len(a.requested) == 4
    nd.handle_message(a, 2, (nd.MSG_CHOKE,), env)
    assert not link.outstanding and not a.requested
    assert a.requested_masks[0] == 0


def test_have_updates_views_and_rarity():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1])
    nd.connect_peer(a, b, env)
    nd.handle_message(a, 2, (nd.MSG_HAVE, 0, 5), env)
    assert a.links[2].info.views[0] == 1 << 5
    assert a.rarity[0][5] == 1
    assert a.have_counts[0] == 1
    # duplicate announcement counts as traffic but not as a new piece
    nd.handle_message(a, 2, (nd.MSG_HAVE, 0, 5), env)
    assert a.rarity[0][5] == 1 and a.have_counts[0] == 2


# -- piece selection -------------------------------------------------------------


def test_select_piece_single_candidate():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 1})
    nd.connect_peer(a, b, env)
    assert nd.select_piece(a, 2, 0, env.rng) == 0


def test_select_piece_rarest_first():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 2})  # has pieces 0,1
    nd.connect_peer(a, b, env)
    a.rarity[0][0] = 5
    a.rarity[0][1] = 1
    assert nd.select_piece(a, 2, 0, env.rng) == 1


def test_select_piece_tie_reproducible():
    def run(seed):
        env = FakeEnv(k=2, torrents=4, pieces=8)
        env.rng = random.Random(seed)
        a = make_client(env, 1, 0, [0, 1])
        b = make_client(env, 2, 1, [0, 1], pieces_done={0: 8})
        nd.connect_peer(a, b, env)
        return nd.select_piece(a, 2, 0, env.rng)

    assert run(5) == run(5)
    assert nd.select_piece is not None


def test_select_piece_nothing_requestable():
    env = FakeEnv(k=2, torrents=4, pieces=4)
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 4})
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 4})
    nd.connect_peer(a, b, env)
    assert nd.select_piece(a, 2, 0, env.rng) is None


# -- unchoking -------------------------------------------------------------------


def test_unchoke_value_adjusted_scores():
    # p1 uploads 10 units of the native (d_cx 0), p2 uploads 15 units of a
    # cover at d_cx 1 with the same M: score 10*2x vs 15*x
    env = FakeEnv(k=2, torrents=4, pieces=8)
    env.params.unchoke_slots = 1
    env.params.optimistic_slots = 0
    a = make_client(env, 1, 0, [0, 1])
    p1 = make_client(env, 2, 1, [0, 1])
    p2 = make_client(env, 3, 1, [0, 1])
    nd.connect_peer(a, p1, env)
    nd.connect_peer(a, p2, env)
    a.links[2].credit = {0: 10 * 65536}
    a.links[3].credit = {1: 15 * 65536}
    nd.unchoke_round(a, env)
    assert not a.links[2].am_choking
    assert a.links[3].am_choking


def test_unchoke_all_when_fewer_links_than_slots():
    env = FakeEnv(k=2, torrents=4)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1])
    c = make_client(env, 3, 1, [0, 1])
    nd.connect_peer(a, b, env)
    nd.connect_peer(a, c, env)
    nd.unchoke_round(a, env)
    assert not a.links[2].am_choking and not a.links[3].am_choking
    assert len(a.unchoked) <= env.params.unchoke_slots + env.params.optimistic_slots


def test_unchoke_respects_slot_cap():
    env = FakeEnv(k=2, torrents=4)
    env.params.unchoke_slots = 2
    env.params.optimistic_slots = 1
    a = make_client(env, 1, 0, [0, 1])
    for pid in range(2, 10):
        peer = make_client(env, pid, 1, [0, 1])
        nd.connect_peer(a, peer, env)
    nd.unchoke_round(a, env)
    assert len(a.unchoked) == 3


def test_seed_rotation_round_robin():
    env = FakeEnv(k=1, torrents=4, pieces=4)
    env.params.unchoke_slots = 2
    env.params.optimistic_slots = 0
    seed = nd.Node(1, SEED, None, 1)
    seed.phase = SEEDING
    seed.active = ActiveSet(1, [0])
    bf = PieceBitfield(env.meta(0), complete=True)
    seed.bitfields[0] = bf
    env.nodes[1] = seed
    env.dht.active(1, 0, 0.0)
    for pid in range(2, 7):
        make_client(env, pid, 0, [0, 1, 2][:1] + [1, 2])
    for pid in range(2, 7):
        nd.connect_peer(seed, env.nodes[pid], env)
    nd.unchoke_round(seed, env)
    first = set(seed.unchoked)
    nd.unchoke_round(seed, env)
    second = set(seed.unchoked)
    assert len(first) == 2 and len(second) == 2
    assert first != second  # rotation advances
    nd.unchoke_round(seed, env)
    covered = first | second | set(seed.unchoked)
    assert covered == {2, 3, 4, 5, 6}


def test_unchoke_ranking_invariant_under_value_rescaling(monkeypatch):
    def chosen_under_scale(scale):
        env = FakeEnv(k=2, torrents=4, pieces=8)
        env.params.unchoke_slots = 2
        env.params.optimistic_slots = 0
        a = make_client(env, 1, 0, [0, 1])
        for pid, credit in ((2, {0: 10}), (3, {0: 30}), (4, {1: 99}), (5, {0: 20})):
            peer = make_client(env, pid, 1, [0, 1])
            nd.connect_peer(a, peer, env)
            a.links[pid].credit = dict(credit)
        original = nd.Node.value_torrents

        def scaled(self, env_, torrents):
            vals = original(self, env_, torrents)
            for tv in vals.values():
                tv.V *= scale
            return vals

        monkeypatch.setattr(nd.Node, "value_torrents", scaled)
        nd.unchoke_round(a, env)
        monkeypatch.setattr(nd.Node, "value_torrents", original)
        return set(a.unchoked)

    assert chosen_under_scale(1.0) == chosen_under_scale(137.5)


def test_unchoke_round_resets_counters():
    env = FakeEnv(k=2, torrents=4)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1])
    nd.connect_peer(a, b, env)
    a.have_counts[0] = 4
    a.request_counts[1] = 2
    a.links[2].credit = {0: 100}
    nd.unchoke_round(a, env)
    assert a.have_counts == {} and a.request_counts == {}
    assert a.links[2].credit == {}


def test_snub_after_timeout():
    env = FakeEnv(k=2, torrents=4, pieces=8)
    a = make_client(env, 1, 0, [0, 1])
    b = make_client(env, 2, 1, [0, 1], pieces_done={0: 8})
    nd.connect_peer(a, b, env)
    nd.handle_message(a, 2, (nd.MSG_UNCHOKE,), env)
    assert a.links[2].outstanding
    env.now = 100.0  # past the snub timeout
    nd.unchoke_round(a, env)
    assert a.links[2].snubbed_until == 100.0 + env.scenario.durations.snub_duration_s
    assert not a.links[2].outstanding and not a.requested


# -- active set updates -----------------------------------------------------------


def test_update_swaps_for_better_candidate():
    env = FakeEnv(k=2, torrents=6, pieces=8)
    env.params.epsilon_random = 0.0
    a = make_client(env, 1, 0, [0, 1])
    # torrent 0 (native) has traffic; torrent 1 is dead; candidate torrent 2
    # is advertised by two busy peers with requests flowing
    p1 = make_client(env, 2, 2, [0, 2])
    p2 = make_client(env, 3, 2, [0, 2])
    nd.connect_peer(a, p1, env)
    nd.connect_peer(a, p2, env)
    env.now = 50.0
    a.request_counts[2] = 0
    a.have_counts[2] = 0
    # candidate 2: M=2 advertisers, demand present; active 1: M=0 -> V=0
    swap = nd.update_active_set(a, env)
    assert swap == (1, 2)
    assert sorted(a.active) == [0, 2]
    drops = [r for r in env.traced if r[2] == "active_set_change" and r[5] == 0]
    adds = [r for r in env.traced if r[2] == "active_set_change" and r[5] == 1]
    assert drops[-1][3] == 1 and adds[-1][3] == 2
    assert 1 not in env.dht.members(1) or 1 not in env.dht.membership.get(1, {})


def test_update_no_swap_when_candidates_worse():
    env = FakeEnv(k=2, torrents=6, pieces=8)
    env.params.epsilon_random = 0.0
    a = make_client(env, 1, 0, [0, 1])
    p1 = make_client(env, 2, 0, [0, 1])
    nd.connect_peer(a, p1, env)
    a.request_counts[0] = 3
    a.request_counts[1] = 3
    assert nd.update_active_set(a, env) is None
    assert sorted(a.active) == [0, 1]


def test_native_can_be_dropped():
    env = FakeEnv(k=2, torrents=6, pieces=8)
    env.params.epsilon_random = 0.0
    a = make_client(env, 1, 0, [0, 1])
    # nobody advertises the native; cover 1 and candidate 2 are busy
    p1 = make_client(env, 2, 1, [1, 2])
    p2 = make_client(env, 3, 1, [1, 2])
    nd.connect_peer(a, p1, env)
    nd.connect_peer(a, p2, env)
    a.request_counts[1] = 5
    env.now = 30.0
    swap = nd.update_active_set(a, env)
    assert swap is not None and swap[0] == 0
    assert 0 not in a.active


def test_native_reacquired_when_covers_exhausted():
    env = FakeEnv(k=2, torrents=6, pieces=4)
    a = make_client(env, 1, 0, [1, 2], pieces_done={1: 4, 2: 4})
    p1 = make_client(env, 2, 1, [1, 2])
    nd.connect_peer(a, p1, env)
    swap = nd.try_native_reacquire(a, env)
    assert swap is not None and swap[1] == 0
    assert 0 in a.active


# -- departure ---------------------------------------------------------------------


def test_depart_requires_native():
    env = FakeEnv(k=2, torrents=6, pieces=4)
    a = make_client(env, 1, 0, [1, 2], pieces_done={1: 4, 2: 4})
    assert nd.maybe_depart(a, env) == TRADING
    assert not env.departures


def test_depart_immediate_with_zero_linger():
    env = FakeEnv(k=2, torrents=6, pieces=4)
    env.now = 77.0
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 4, 1: 4})
    assert nd.maybe_depart(a, env) == SEEDING
    assert env.departures == [(1, 77.0)]


def test_depart_linger_delays():
    env = FakeEnv(k=2, torrents=6, pieces=4)
    env.scenario.durations.seed_linger_s = 600.0
    env.now = 100.0
    a = make_client(env, 1, 0, [0, 1], pieces_done={0: 4, 1: 4})
    nd.maybe_depart(a, env)
    assert env.departures == [(1, 700.0)]
