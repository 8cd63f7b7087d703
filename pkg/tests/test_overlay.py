# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

import io
import unittest

import networkx as nx
import numpy as np
import pytest

from pydsnc.overlay import (
    SERVER_ID,
    CapacityTier,
    ChurnKind,
    ChurnModel,
    DeparturePolicy,
    Group,
    Grouping,
    LinkFailureModel,
    PeerProfile,
    TopologyError,
    TopologySpec,
    attach_peer,
    dissimilarity,
    dump_topology,
    elect_super_peer,
    form_groups,
    generate_topology,
    interest_score,
    repair_overlay,
    sample_arrivals,
    sample_churn_events,
    sample_link_failure,
)


def _peer(peer_id, bits, contribution=1.0, upload=10.0, in_campus=True):
    return PeerProfile(
        peer_id,
        upload,
        100.0,
        in_campus=in_campus,
        content_bitmap=np.array(bits, dtype=bool),
        contribution=contribution,
    )


@pytest.fixture
def spec():
    return TopologySpec(peers=100, overlay_degree=4, chunk_count=16)


class PeerProfileTest(unittest.TestCase):
    def test_capacities_positive(self):
        with pytest.raises(TopologyError):
            PeerProfile(1, 0, 10)
        with pytest.raises(TopologyError):
            PeerProfile(1, 10, -1)

    def test_contribution_non_decreasing(self):
        peer = PeerProfile(1, 10, 10)
        peer.add_contribution(5)
        assert peer.contribution == 5
        with pytest.raises(TopologyError):
            peer.add_contribution(-1)
        with pytest.raises(TopologyError):
            PeerProfile(1, 10, 10, contribution=-1)


class InterestScoreTest(unittest.TestCase):
    def test_identical_content(self):
        a = _peer(1, [1, 0, 1, 0])
        b = _peer(2, [1, 0, 1, 0], contribution=10)
        assert interest_score(a, b) == 0.0

    def test_zero_contribution(self):
        a = _peer(1, [1, 1, 0, 0])
        b = _peer(2, [0, 0, 1, 1], contribution=0)
        assert interest_score(a, b) == 0.0

    def test_half_dissimilar(self):
        a = _peer(1, [1, 1, 0, 0])
        b = _peer(2, [1, 1, 1, 1], contribution=10)
        assert dissimilarity(a.content_bitmap, b.content_bitmap) == 0.5
        assert interest_score(a, b) == 5.0

    def test_uninterested(self):
        a = _peer(1, [1, 0])
        b = _peer(2, [0, 1], contribution=3)
        b.interested = False
        assert interest_score(a, b) == 0.0

    def test_empty_bitmaps(self):
        assert dissimilarity(np.zeros(4, dtype=bool), np.zeros(4, dtype=bool)) == 0.0


class ElectionTest(unittest.TestCase):
    def test_singleton(self):
        profiles = {4: _peer(4, [])}
        assert elect_super_peer(Group(0, [4]), profiles) == 4

    def test_highest_upload_lowest_id(self):
        profiles = {1: _peer(1, [], upload=5), 2: _peer(2, [], upload=9), 3: _peer(3, [], upload=9)}
        assert elect_super_peer(Group(0, [3, 1, 2]), profiles) == 2

    def test_equal_capacities(self):
        profiles = {k: _peer(k, []) for k in (7, 5, 6)}
        assert elect_super_peer(Group(0, [7, 5, 6]), profiles) == 5

    def test_empty_group(self):
        with pytest.raises(TopologyError):
            elect_super_peer(Group(0, []), {})


class FormGroupsTest(unittest.TestCase):
    def test_all_scores_zero(self):
        peers = [_peer(k, [1, 0, 1]) for k in range(1, 6)]
        groups = form_groups(peers)
        assert [g.members for g in groups] == [[k] for k in range(1, 6)]
        assert all(g.super_peers == g.members for g in groups)

    def test_complementary_halves(self):
        peers = [_peer(1, [1, 1, 0, 0]), _peer(2, [0, 0, 1, 1])]
        (group,) = form_groups(peers)
        assert group.members == [1, 2]
        assert group.super_peers == [1]
        assert group.in_campus

    def test_threshold_refuses(self):
        peers = [_peer(1, [1, 1, 0, 0]), _peer(2, [0, 0, 1, 1])]
        assert len(form_groups(peers, threshold=1.0)) == 2

    def test_max_group_size(self):
        peers = [_peer(k, [k % 2, 1 - k % 2]) for k in range(1, 11)]
        groups = form_groups(peers, max_group_size=3)
        assert all(len(g.members) <= 3 for g in groups)
        assert sorted(m for g in groups for m in g.members) == list(range(1, 11))

    def test_respects_graph(self):
        graph = nx.path_graph([1, 2, 3])
        peers = [_peer(1, [1, 0]), _peer(2, [1, 0]), _peer(3, [0, 1])]
        groups = form_groups(peers, graph=graph)
        assert [g.members for g in groups] == [[1], [2, 3]]

    def test_empty(self):
        assert form_groups([]) == []

    def test_partition_is_reproducible(self):
        rng = np.random.default_rng(300)
        peers = [
            _peer(k, rng.random(32) < 0.5, contribution=float(rng.integers(0, 5)))
            for k in range(1, 301)
        ]
        first = form_groups(peers)
        second = form_groups(peers)
        assert [g.members for g in first] == [g.members for g in second]
        members = sorted(m for g in first for m in g.members)
        assert members == list(range(1, 301))
        assert 1 < len(first) < 300


class GroupingTest(unittest.TestCase):
    def setUp(self):
        self.profiles = {
            1: _peer(1, [1, 1, 0, 0], upload=5),
            2: _peer(2, [0, 0, 1, 1], upload=9),
            3: _peer(3, [1, 0, 0, 0], in_campus=False),
            4: _peer(4, [0, 1, 0, 0], in_campus=False),
        }
        groups = form_groups([self.profiles[1], self.profiles[2]])
        groups += form_groups(
            [self.profiles[3], self.profiles[4]], first_group_id=len(groups)
        )
        self.grouping = Grouping(groups, self.profiles)

    def test_domains(self):
        assert self.grouping.super_peers(in_campus=True) == [2]
        assert self.grouping.super_peers(in_campus=False) == [3]
        assert self.grouping.super_peers() == [2, 3]
        assert self.grouping.is_super_peer(2)
        assert not self.grouping.is_super_peer(1)

    def test_duplicate_membership(self):
        with pytest.raises(TopologyError):
            Grouping([Group(0, [1]), Group(1, [1])], self.profiles)

    def test_reelection(self):
        group = self.grouping.remove_peer(2)
        assert group.super_peers == [1]
        assert self.grouping.group_of(2) is None

    def test_dissolve(self):
        self.grouping.remove_peer(3)
        group_id = self.grouping.membership[4]
        self.grouping.remove_peer(4)
        assert group_id not in self.grouping.groups
        assert self.grouping.remove_peer(4) is None

    def test_attach_late_joiner(self):
        self.profiles[5] = _peer(5, [0, 0, 1, 1])
        group = self.grouping.attach(5)
        assert 5 in group.members
        assert group.in_campus
        assert self.grouping.attach(5) is group

    def test_attach_alone(self):
        self.profiles[6] = _peer(6, [1, 1, 0, 0], contribution=0, in_campus=False)
        self.profiles[3].contribution = 0
        self.profiles[4].contribution = 0
        group = self.grouping.attach(6)
        assert group.members == [6]
        assert group.super_peers == [6]
        assert not group.in_campus

    def test_assign_content(self):
        owners = self.grouping.assign_content([0, 1, 2])
        campus = self.grouping.domain_groups(True)[0].group_id
        outside = self.grouping.domain_groups(False)[0].group_id
        assert owners == {
            (True, 0): campus,
            (True, 1): campus,
            (True, 2): campus,
            (False, 0): outside,
            (False, 1): outside,
            (False, 2): outside,
        }
        assert self.grouping.owner(False, 2).group_id == outside
        assert self.grouping.owner(True, 7) is None


class TopologyTest(unittest.TestCase):
    def test_single_peer(self):
        topology = generate_topology(TopologySpec(peers=1), np.random.default_rng(0))
        assert topology.peers == [1]
        assert list(topology.graph.edges) == [(SERVER_ID, 1)]

    def test_homogeneous_degree(self):
        spec = TopologySpec(peers=100, overlay_degree=4, chunk_count=16)
        topology = generate_topology(spec, np.random.default_rng(1))
        peer_graph = topology.graph.subgraph(topology.peers)
        degrees = [d for _, d in peer_graph.degree()]
        assert abs(np.mean(degrees) - 4) < 0.5
        assert nx.is_connected(topology.graph)
        assert {p.upload_capacity for k, p in topology.profiles.items() if k} == {spec.upload_capacity}
        assert len(topology.campus) == 30
        assert topology.graph.degree(SERVER_ID) == spec.server_degree

    def test_odd_degree_product(self):
        topology = generate_topology(TopologySpec(peers=11, overlay_degree=3), np.random.default_rng(2))
        assert nx.is_connected(topology.graph)

    def test_deterministic(self):
        spec = TopologySpec(peers=50, chunk_count=8)
        a = generate_topology(spec, np.random.default_rng(7))
        b = generate_topology(spec, np.random.default_rng(7))
        assert sorted(a.graph.edges) == sorted(b.graph.edges)
        assert a.campus == b.campus

    def test_heterogeneous_tiers(self):
        tiers = (CapacityTier(10, 20, 1), CapacityTier(30, 60, 1))
        topology = generate_topology(TopologySpec(peers=200, tiers=tiers), np.random.default_rng(3))
        uploads = {p.upload_capacity for k, p in topology.profiles.items() if k != SERVER_ID}
        assert uploads == {10, 30}

    def test_crossing_and_capacity(self):
        topology = generate_topology(TopologySpec(peers=20, campus_fraction=0.5), np.random.default_rng(4))
        inside = min(topology.campus)
        outside = min(set(topology.peers) - topology.campus)
        assert topology.crosses_access(inside, outside)
        assert not topology.crosses_access(SERVER_ID, outside)
        assert topology.crosses_access(SERVER_ID, inside)
        assert topology.edge_capacity(SERVER_ID, inside) == topology.profiles[inside].upload_capacity

    def test_validation(self):
        for kwargs in (
            {"peers": 0},
            {"peers": 5, "overlay_degree": 0},
            {"peers": 5, "campus_fraction": 1.5},
            {"peers": 5, "access_capacity": 0},
            {"peers": 5, "tiers": (CapacityTier(0, 1),)},
        ):
            with pytest.raises(TopologyError):
                TopologySpec(**kwargs)


def test_dump_topology(spec):
    topology = generate_topology(spec, np.random.default_rng(5))
    stream = io.StringIO()
    dump_topology(topology, stream)
    lines = stream.getvalue().splitlines()
    assert len(lines) == topology.graph.number_of_edges()
    u, v, capacity = lines[0].split()
    assert int(u) < int(v)
    assert float(capacity) == topology.edge_capacity(int(u), int(v))


def test_sample_arrivals():
    rng = np.random.default_rng(6)
    times = sample_arrivals(2.0, 1000.0, rng)
    assert np.all(np.diff(times) > 0)
    assert times.max() < 1000.0
    assert abs(len(times) - 2000) < 200
    assert sample_arrivals(0.0, 10.0, rng).size == 0


def test_churn_events():
    model = ChurnModel(arrival_rate=1.0, initial_fraction=0.5, mean_lifetime=50.0)
    events = sample_churn_events(model, range(1, 21), 1000.0, np.random.default_rng(8))
    joins = [e for e in events if e.kind is ChurnKind.JOIN]
    assert len(joins) == 20
    assert sum(1 for e in joins if e.time == 0.0) == 10
    assert [e.time for e in events] == sorted(e.time for e in events)
    for leave in (e for e in events if e.kind is ChurnKind.LEAVE):
        join = next(e for e in joins if e.peer_id == leave.peer_id)
        assert join.time <= leave.time < 1000.0


def test_churn_events_without_arrivals():
    events = sample_churn_events(ChurnModel(), [3, 1, 2], 100.0, np.random.default_rng(9))
    assert sorted(e.peer_id for e in events) == [1, 2, 3]
    assert all(e.kind is ChurnKind.JOIN and e.time == 0.0 for e in events)


def test_churn_model_validation():
    with pytest.raises(TopologyError):
        ChurnModel(arrival_rate=-1)
    with pytest.raises(TopologyError):
        ChurnModel(initial_fraction=2)
    with pytest.raises(TopologyError):
        ChurnModel(mean_lifetime=0)
    assert ChurnModel(departure=DeparturePolicy.LEAVE).departure is DeparturePolicy.LEAVE


def test_link_failures():
    rng = np.random.default_rng(10)
    assert not any(sample_link_failure(LinkFailureModel(0.0), rng) for _ in range(100))
    assert all(sample_link_failure(LinkFailureModel(1.0), rng) for _ in range(100))
    rate = np.mean([sample_link_failure(LinkFailureModel(0.1), rng) for _ in range(20_000)])
    assert abs(rate - 0.1) < 0.01
    with pytest.raises(TopologyError):
        LinkFailureModel(1.5)


class RepairOverlayTest(unittest.TestCase):
    def setUp(self):
        self.topology = generate_topology(TopologySpec(peers=40, overlay_degree=4), np.random.default_rng(8))
        self.live = set(self.topology.peers)
        self.rng = np.random.default_rng(9)

    def _live_degree(self, node):
        return sum(1 for n in self.topology.graph.neighbors(node) if n in self.live)

    def test_server_neighbors_leaving(self):
        graph = self.topology.graph
        for _ in range(3):
            for departed in sorted(graph.neighbors(SERVER_ID)):
                orphans = [n for n in graph.neighbors(departed) if n in self.live and n != departed]
                self.live.discard(departed)
                touched = repair_overlay(self.topology, departed, self.live, self.rng)
                assert graph.degree(departed) == 0
                for orphan in orphans:
                    if orphan != SERVER_ID:
                        assert self._live_degree(orphan) >= 4
                assert touched

        assert self._live_degree(SERVER_ID) == self.topology.server_degree
        assert nx.is_connected(graph.subgraph(self.live | {SERVER_ID}))

    def test_repair_bridges_cut_off_peers(self):
        graph = self.topology.graph
        # isolate a pair of peers from everything but one hub
        hub, a, b = 1, 2, 3
        graph.remove_edges_from(list(graph.edges([a, b])))
        graph.add_edges_from([(hub, a), (a, b)])
        self.live.discard(hub)
        repair_overlay(self.topology, hub, self.live, self.rng)
        assert nx.is_connected(graph.subgraph(self.live | {SERVER_ID}))

    def test_attach_peer(self):
        graph = self.topology.graph
        joiner = next(p for p in self.topology.peers if not graph.has_edge(SERVER_ID, p))
        graph.remove_edges_from(list(graph.edges(joiner)))
        self.live.discard(joiner)
        touched = attach_peer(self.topology, joiner, self.live, self.rng)
        self.live.add(joiner)
        assert joiner in touched
        assert self._live_degree(joiner) == 4
        assert SERVER_ID not in graph.neighbors(joiner)
