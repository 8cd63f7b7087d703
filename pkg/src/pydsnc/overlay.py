# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Peers, the overlay graph, interest groups and churn.

Node 0 is always the content server; peers are numbered from 1. A share of
the peers sits behind the campus access link, and every transfer between a
campus node and an outside node is charged to that link.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, TextIO, Tuple

import networkx as nx
import numpy as np

log = logging.getLogger(__name__)

SERVER_ID = 0
DEFAULT_MAX_GROUP_SIZE = 8


class TopologyError(ValueError): ...


@dataclass
class PeerProfile:
    peer_id: int
    upload_capacity: float
    download_capacity: float
    in_campus: bool = False
    content_bitmap: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    contribution: float = 0.0
    interested: bool = True

    def __post_init__(self):
        if self.upload_capacity <= 0 or self.download_capacity <= 0:
            raise TopologyError(
                f"peer {self.peer_id}: capacities must be positive, got "
                f"up={self.upload_capacity} down={self.download_capacity}"
            )
        if self.contribution < 0:
            raise TopologyError(f"peer {self.peer_id}: negative contribution")

    def add_contribution(self, amount: float) -> None:
        if amount < 0:
            raise TopologyError(f"peer {self.peer_id}: contribution cannot decrease")
        self.contribution += amount


def dissimilarity(a: np.ndarray, b: np.ndarray) -> float:
    """``|a xor b| / |a or b|`` over chunk bitmaps, 0 when both are empty."""
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a ^ b)) / union


def interest_score(requester: PeerProfile, candidate: PeerProfile) -> float:
    """How much ``requester`` gains from grouping with ``candidate``.

    Dissimilar content (between two peers after the same file) weighted by how
    much the candidate has contributed so far.
    """
    if not (requester.interested and candidate.interested):
        return 0.0
    return dissimilarity(requester.content_bitmap, candidate.content_bitmap) * candidate.contribution


@dataclass
class Group:
    group_id: int
    members: List[int]
    super_peers: List[int] = field(default_factory=list)
    in_campus: bool = False
    content_share: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.members = sorted(self.members)


def elect_super_peer(group: Group, profiles: Mapping[int, PeerProfile]) -> int:
    """Highest upload capacity wins; ties go to the lowest peer id."""
    if not group.members:
        raise TopologyError(f"group {group.group_id} has no members")
    return min(group.members, key=lambda peer: (-profiles[peer].upload_capacity, peer))


def _neighbors(peer: int, graph: Optional[nx.Graph], domain: Set[int]) -> List[int]:
    if graph is None:
        return sorted(domain - {peer})
    return sorted(n for n in graph.neighbors(peer) if n in domain and n != peer)


def form_groups(
    peers: Sequence[PeerProfile],
    graph: Optional[nx.Graph] = None,
    threshold: float = 0.0,
    max_group_size: int = DEFAULT_MAX_GROUP_SIZE,
    first_group_id: int = 0,
) -> List[Group]:
    """Greeting-based grouping of one locality domain.

    Peers greet their neighbors in ascending id order. A peer joins the group
    of the first neighbor whose interest score clears ``threshold`` and whose
    group still has room; a neighbor without a group forms a new pair with it.
    Peers nobody accepts stay on their own. Every group then elects its
    super-peer.
    """
    if max_group_size < 1:
        raise TopologyError(f"max_group_size must be at least 1, got {max_group_size}")
    profiles = {p.peer_id: p for p in peers if p.interested}
    domain = set(profiles)
    membership: Dict[int, int] = {}
    members: List[List[int]] = []

    for peer in sorted(domain):
        if peer in membership:
            continue
        for neighbor in _neighbors(peer, graph, domain):
            if interest_score(profiles[peer], profiles[neighbor]) <= threshold:
                continue
            if neighbor in membership:
                slot = membership[neighbor]
                if len(members[slot]) >= max_group_size:
                    continue
                members[slot].append(peer)
                membership[peer] = slot
            elif max_group_size >= 2:
                membership[peer] = membership[neighbor] = len(members)
                members.append([peer, neighbor])
            else:
                continue
            break
        if peer not in membership:
            membership[peer] = len(members)
            members.append([peer])

    groups = []
    for offset, group_members in enumerate(members):
        group = Group(first_group_id + offset, group_members)
        group.in_campus = all(profiles[m].in_campus for m in group.members)
        group.super_peers = [elect_super_peer(group, profiles)]
        groups.append(group)
    log.info(
        "formed %d group(s) from %d peer(s), largest %d",
        len(groups),
        len(domain),
        max((len(g.members) for g in groups), default=0),
    )
    return groups


class Grouping:
    """The live set of interest groups, kept consistent under churn."""

    def __init__(self, groups: Iterable[Group], profiles: Mapping[int, PeerProfile]) -> None:
        self.profiles = profiles
        self.groups: Dict[int, Group] = {g.group_id: g for g in groups}
        self.membership: Dict[int, int] = {}
        for group in self.groups.values():
            for member in group.members:
                if member in self.membership:
                    raise TopologyError(f"peer {member} is in more than one group")
                self.membership[member] = group.group_id
        self._next_id = max(self.groups, default=-1) + 1

    def group_of(self, peer: int) -> Optional[Group]:
        group_id = self.membership.get(peer)
        return None if group_id is None else self.groups[group_id]

    def super_peers(self, in_campus: Optional[bool] = None) -> List[int]:
        return sorted(
            sp
            for g in self.groups.values()
            if in_campus is None or g.in_campus == in_campus
            for sp in g.super_peers
        )

    def is_super_peer(self, peer: int) -> bool:
        group = self.group_of(peer)
        return group is not None and peer in group.super_peers

    def domain_groups(self, in_campus: bool) -> List[Group]:
        return [self.groups[k] for k in sorted(self.groups) if self.groups[k].in_campus == in_campus]

    def remove_peer(self, peer: int) -> Optional[Group]:
        """Drops a departed peer, re-electing its group's super-peer if needed."""
        group = self.group_of(peer)
        if group is None:
            return None
        del self.membership[peer]
        group.members.remove(peer)
        if not group.members:
            del self.groups[group.group_id]
            log.debug("group %d dissolved", group.group_id)
            return group
        if peer in group.super_peers:
            group.super_peers = [elect_super_peer(group, self.profiles)]
            log.debug("group %d re-elected super-peer %d", group.group_id, group.super_peers[0])
        return group

    def attach(
        self,
        peer: int,
        graph: Optional[nx.Graph] = None,
        threshold: float = 0.0,
        max_group_size: int = DEFAULT_MAX_GROUP_SIZE,
    ) -> Group:
        """Greets the grouped neighbors of a late joiner in its own domain."""
        if peer in self.membership:
            return self.groups[self.membership[peer]]
        profile = self.profiles[peer]
        domain = {
            p for p in self.membership if self.profiles[p].in_campus == profile.in_campus
        }
        for neighbor in _neighbors(peer, graph, domain | {peer}):
            group = self.groups[self.membership[neighbor]]
            if len(group.members) >= max_group_size:
                continue
            if interest_score(profile, self.profiles[neighbor]) > threshold:
                group.members = sorted(group.members + [peer])
                self.membership[peer] = group.group_id
                return group

        group = Group(self._next_id, [peer], [peer], in_campus=profile.in_campus)
        self._next_id += 1
        self.groups[group.group_id] = group
        self.membership[peer] = group.group_id
        return group

    def assign_content(self, packet_group_ids: Sequence[int]) -> Dict[Tuple[bool, int], int]:
        """Spreads packet groups round-robin over each domain's groups.

        Returns ``(in_campus, packet_group_id) -> owning group id``.
        """
        owners: Dict[Tuple[bool, int], int] = {}
        for in_campus in (True, False):
            groups = self.domain_groups(in_campus)
            for group in groups:
                group.content_share = []
            if not groups:
                continue
            for index, packet_group in enumerate(packet_group_ids):
                owner = groups[index % len(groups)]
                owner.content_share.append(packet_group)
                owners[(in_campus, packet_group)] = owner.group_id
        return owners

    def owner(self, in_campus: bool, packet_group: int) -> Optional[Group]:
        for group in self.domain_groups(in_campus):
            if packet_group in group.content_share:
                return group
        return None


@dataclass(frozen=True)
class CapacityTier:
    upload: float
    download: float
    weight: float = 1.0


@dataclass(frozen=True)
class TopologySpec:
    peers: int
    overlay_degree: int = 4
    server_degree: int = 4
    campus_fraction: float = 0.3
    upload_capacity: float = 64 * 1024.0
    download_capacity: float = 256 * 1024.0
    server_upload: float = 256 * 1024.0
    access_capacity: float = 1024 * 1024.0
    tiers: Tuple[CapacityTier, ...] = ()
    chunk_count: int = 0

    def __post_init__(self):
        if self.peers < 1:
            raise TopologyError(f"need at least one peer, got {self.peers}")
        if self.overlay_degree < 1 or self.server_degree < 1:
            raise TopologyError("overlay and server degree must be at least 1")
        if not 0.0 <= self.campus_fraction <= 1.0:
            raise TopologyError(f"campus_fraction must be in [0, 1], got {self.campus_fraction}")
        if min(self.server_upload, self.access_capacity) <= 0:
            raise TopologyError("server upload and access capacity must be positive")
        if any(t.upload <= 0 or t.download <= 0 or t.weight <= 0 for t in self.tiers):
            raise TopologyError("capacity tiers need positive capacities and weights")


@dataclass
class Topology:
    graph: nx.Graph
    profiles: Dict[int, PeerProfile]
    campus: Set[int]
    access_capacity: float
    server_id: int = SERVER_ID
    overlay_degree: int = 4
    server_degree: int = 4

    @property
    def peers(self) -> List[int]:
        return sorted(p for p in self.graph.nodes if p != self.server_id)

    def neighbors(self, node: int) -> List[int]:
        return sorted(self.graph.neighbors(node))

    def is_campus(self, node: int) -> bool:
        return node in self.campus

    def crosses_access(self, u: int, v: int) -> bool:
        return (u in self.campus) != (v in self.campus)

    def edge_capacity(self, u: int, v: int) -> float:
        return min(self.profiles[u].upload_capacity, self.profiles[v].upload_capacity)


def _peer_graph(n: int, degree: int, seed: int) -> nx.Graph:
    if n <= degree:
        graph = nx.complete_graph(n)
    elif (n * degree) % 2 == 0:
        graph = nx.random_regular_graph(degree, n, seed=seed)
    else:
        graph = nx.gnm_random_graph(n, n * degree // 2, seed=seed)

    components = sorted((min(c) for c in nx.connected_components(graph)))
    for a, b in zip(components, components[1:]):
        graph.add_edge(a, b)
    return nx.relabel_nodes(graph, {node: node + 1 for node in graph.nodes})


def generate_topology(spec: TopologySpec, rng: np.random.Generator) -> Topology:
    """Builds a random overlay with the server attached to a few peers.

    Raises:
        TopologyError: If the spec is inconsistent
    """
    graph = nx.Graph()
    graph.add_node(SERVER_ID)
    graph.update(_peer_graph(spec.peers, spec.overlay_degree, int(rng.integers(2**32))))
    peer_ids = np.arange(1, spec.peers + 1)

    attached = rng.choice(peer_ids, size=min(spec.server_degree, spec.peers), replace=False)
    graph.add_edges_from((SERVER_ID, int(p)) for p in sorted(attached))

    campus_size = int(round(spec.campus_fraction * spec.peers))
    campus = {int(p) for p in rng.choice(peer_ids, size=campus_size, replace=False)}

    if spec.tiers:
        weights = np.array([t.weight for t in spec.tiers], dtype=np.float64)
        picks = rng.choice(len(spec.tiers), size=spec.peers, p=weights / weights.sum())
        capacities = [(spec.tiers[k].upload, spec.tiers[k].download) for k in picks]
    else:
        capacities = [(spec.upload_capacity, spec.download_capacity)] * spec.peers

    profiles = {
        SERVER_ID: PeerProfile(
            SERVER_ID,
            spec.server_upload,
            spec.server_upload,
            content_bitmap=np.ones(spec.chunk_count, dtype=bool),
            interested=False,
        )
    }
    for peer, (up, down) in zip(peer_ids.tolist(), capacities):
        profiles[peer] = PeerProfile(
            peer,
            up,
            down,
            in_campus=peer in campus,
            content_bitmap=np.zeros(spec.chunk_count, dtype=bool),
        )

    log.debug(
        "topology: %d peers, %d edges, %d in campus",
        spec.peers,
        graph.number_of_edges(),
        len(campus),
    )
    return Topology(
        graph,
        profiles,
        campus,
        spec.access_capacity,
        overlay_degree=spec.overlay_degree,
        server_degree=spec.server_degree,
    )


def _top_up(
    topology: Topology, node: int, degree: int, live: Set[int], rng: np.random.Generator
) -> List[int]:
    graph = topology.graph
    linked = {n for n in graph.neighbors(node) if n in live}
    missing = degree - len(linked)
    candidates = sorted(live - linked - {node, topology.server_id})
    if missing <= 0 or not candidates:
        return []
    chosen = rng.choice(candidates, size=min(missing, len(candidates)), replace=False)
    picks = sorted(int(p) for p in chosen)
    graph.add_edges_from((node, p) for p in picks)
    return picks


def _bridge(topology: Topology, live: Set[int], rng: np.random.Generator) -> Set[int]:
    """Joins every live component cut off from the server to the server's one."""
    server = topology.server_id
    view = topology.graph.subgraph(live | {server})
    components = sorted((sorted(c) for c in nx.connected_components(view)), key=lambda c: c[0])
    main = next(c for c in components if server in c)
    anchors = [n for n in main if n != server] or [server]
    touched: Set[int] = set()
    for component in components:
        if server in component:
            continue
        u = component[int(rng.integers(len(component)))]
        v = anchors[int(rng.integers(len(anchors)))]
        topology.graph.add_edge(u, v)
        touched.update((u, v))
    return touched


def _reconnect(
    topology: Topology, nodes: Iterable[int], live: Set[int], rng: np.random.Generator
) -> Set[int]:
    touched: Set[int] = set()
    for node in sorted(nodes):
        if node == topology.server_id or node not in live:
            continue
        added = _top_up(topology, node, topology.overlay_degree, live, rng)
        if added:
            touched.update(added)
            touched.add(node)
    added = _top_up(topology, topology.server_id, topology.server_degree, live, rng)
    if added:
        touched.update(added)
        touched.add(topology.server_id)
    return touched | _bridge(topology, live, rng)


def repair_overlay(
    topology: Topology, departed: int, live: Set[int], rng: np.random.Generator
) -> Set[int]:
    """Detaches a departed peer and reconnects the neighbors it leaves behind.

    Each live former neighbor is topped back up to ``overlay_degree`` live
    links and the server to ``server_degree``, with random picks from
    ``live``; a live component cut off from the server is bridged back to it.
    Returns the nodes whose links changed.
    """
    graph = topology.graph
    orphans = sorted(graph.neighbors(departed))
    graph.remove_edges_from((departed, n) for n in orphans)
    touched = _reconnect(topology, orphans, live - {departed}, rng)
    if touched:
        log.debug("overlay repaired after peer %d left: %d node(s) relinked", departed, len(touched))
    return touched


def attach_peer(topology: Topology, peer: int, live: Set[int], rng: np.random.Generator) -> Set[int]:
    """Links a joining peer to live peers until it has ``overlay_degree`` of them."""
    return _reconnect(topology, [peer], live | {peer}, rng)


def dump_topology(topology: Topology, stream: TextIO) -> None:
    """Writes one ``peer_id peer_id capacity`` line per overlay edge."""
    for u, v in sorted(tuple(sorted(edge)) for edge in topology.graph.edges):
        stream.write(f"{u} {v} {topology.edge_capacity(u, v):.12g}\n")


class DeparturePolicy(str, Enum):
    STAY = "stay"
    LEAVE = "leave"


class ChurnKind(str, Enum):
    JOIN = "join"
    LEAVE = "leave"


@dataclass(frozen=True)
class ChurnModel:
    arrival_rate: float = 0.0
    initial_fraction: float = 1.0
    departure: DeparturePolicy = DeparturePolicy.STAY
    mean_lifetime: Optional[float] = None

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise TopologyError(f"arrival_rate must be non-negative, got {self.arrival_rate}")
        if not 0.0 <= self.initial_fraction <= 1.0:
            raise TopologyError(f"initial_fraction must be in [0, 1], got {self.initial_fraction}")
        if self.mean_lifetime is not None and self.mean_lifetime <= 0:
            raise TopologyError(f"mean_lifetime must be positive, got {self.mean_lifetime}")


@dataclass(frozen=True)
class ChurnEvent:
    time: float
    kind: ChurnKind
    peer_id: int


def sample_arrivals(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson-process arrival times in ``[0, horizon)``."""
    if rate <= 0 or horizon <= 0:
        return np.zeros(0)
    times = []
    t = rng.exponential(1 / rate)
    while t < horizon:
        times.append(t)
        t += rng.exponential(1 / rate)
    return np.asarray(times)


def sample_churn_events(
    model: ChurnModel,
    peers: Sequence[int],
    horizon: float,
    rng: np.random.Generator,
) -> List[ChurnEvent]:
    """Joins and lifetime departures for a peer population.

    ``initial_fraction`` of the peers join at time 0; the rest arrive one by
    one on a Poisson process and never join if it runs past the horizon.
    Departures at download completion are the simulator's business.
    """
    order = [int(p) for p in rng.permutation(sorted(peers))]
    initial = int(round(model.initial_fraction * len(order)))
    arrivals = sample_arrivals(model.arrival_rate, horizon, rng)

    joins = [(0.0, peer) for peer in order[:initial]]
    joins += [(float(t), peer) for t, peer in zip(arrivals, order[initial:])]

    events = []
    for time, peer in joins:
        events.append(ChurnEvent(time, ChurnKind.JOIN, peer))
        if model.mean_lifetime is not None:
            leave = time + float(rng.exponential(model.mean_lifetime))
            if leave < horizon:
                events.append(ChurnEvent(leave, ChurnKind.LEAVE, peer))
    events.sort(key=lambda e: (e.time, e.kind != ChurnKind.JOIN, e.peer_id))
    return events


@dataclass(frozen=True)
class LinkFailureModel:
    p_fail: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_fail <= 1.0:
            raise TopologyError(f"p_fail must be in [0, 1], got {self.p_fail}")


def sample_link_failure(model: LinkFailureModel, rng: np.random.Generator) -> bool:
    return model.p_fail > 0 and rng.random() < model.p_fail
