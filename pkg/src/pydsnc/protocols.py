# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Peer logic for the three distribution protocols.

The event engine asks a protocol what an idle node should upload next
(:meth:`DistributionProtocol.next_upload`) and tells it when each copy lands
or is lost. A node uploads one action at a time: a single packet, or one
packet copied to several receivers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Hashable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from pydsnc.coding import (
    CodedPacket,
    Decoder,
    PacketGroup,
    build_vector_pool,
    encode,
    form_packet_groups,
    join_content,
    plan_packet_groups,
    reassemble,
    unit_vector,
    vector_bytes,
)
from pydsnc.dsnc import GroupSession, ProtocolStall, ReceptionIndicator
from pydsnc.gf import TABLE_MUL_MAX_Q
from pydsnc.metrics import TransferKind
from pydsnc.overlay import SERVER_ID, Grouping, form_groups

if TYPE_CHECKING:
    from pydsnc.simulator import Simulation

log = logging.getLogger(__name__)

# Vectors kept from the universe when q > 8; any prefix of an MDS set is MDS.
WIDE_FIELD_UNIVERSE = 1024


class ProtocolKind(str, Enum):
    TNNC = "tnnc"
    FNCM = "fncm"
    DSNC = "dsnc"


class TnncMode(str, Enum):
    MESH = "mesh"
    TREE = "tree"


class Phase(str, Enum):
    NPTP = "nptp"
    CPTP = "cptp"


@dataclass(frozen=True)
class Copy:
    dst: int
    payload_bytes: int
    overhead_bytes: int
    kind: TransferKind
    group_id: int
    packet: Any
    key: Hashable


@dataclass
class UploadAction:
    src: int
    copies: List[Copy]
    tag: Tuple[Any, ...] = ()


def tnnc_step(
    missing: np.ndarray,
    neighbor_holdings: Sequence[np.ndarray],
    rng: np.random.Generator,
    offered: Optional[np.ndarray] = None,
) -> Optional[int]:
    """Picks the locally rarest chunk a peer still misses.

    Rarity is the number of neighbors holding the chunk; chunks no neighbor
    holds (or the serving neighbor does not ``offer``) are not candidates.
    Ties are broken uniformly at random. Returns None when idle.
    """
    if not neighbor_holdings:
        return None
    counts = np.sum(np.vstack(neighbor_holdings), axis=0)
    candidates = missing & (counts > 0)
    if offered is not None:
        candidates &= offered
    indices = np.flatnonzero(candidates)
    if indices.size == 0:
        return None
    rarest = counts[indices].min()
    ties = indices[counts[indices] == rarest]
    if ties.size == 1:
        return int(ties[0])
    return int(ties[rng.integers(ties.size)])


def fncm_step(sender: Decoder, rng: np.random.Generator) -> Optional[CodedPacket]:
    """A uniformly random nonzero combination of what the sender holds."""
    return sender.recode(rng)


def dsnc_step(protocol: DsncProtocol, node: int) -> Optional[UploadAction]:
    """Native packets while the native phase lasts, group-by-group coded delivery after."""
    if protocol.phase is Phase.NPTP:
        return protocol.nptp_step(node)
    return protocol.cptp_step(node)


class DistributionProtocol:
    kind: ProtocolKind

    def __init__(self, sim: Simulation) -> None:
        self.sim = sim
        self.config = sim.config
        self.topology = sim.topology
        self.plan = sim.plan
        self.field = sim.field
        self.rng = sim.protocol_rng
        self.cursor: Dict[int, int] = {}

    def start(self) -> None:
        pass

    def join(self, peer: int) -> None:
        pass

    def leave(self, peer: int) -> None:
        pass

    def phase_transition(self) -> None:
        pass

    def next_upload(self, node: int) -> Optional[UploadAction]:
        raise NotImplementedError

    def delivered(self, src: int, copy: Copy, lost: bool) -> bool:
        """Applies a finished copy; returns whether it was innovative."""
        raise NotImplementedError

    def aborted(self, src: int, copy: Copy) -> None:
        pass

    def action_done(self, action: UploadAction, delivered: Set[int]) -> Optional[float]:
        """Called once every copy of an action has landed, been lost or aborted.

        Returns a backoff delay before the sender may upload again, if any.
        """
        return None

    def content_of(self, peer: int) -> Optional[bytes]:
        return None

    def wake_targets(self, node: int) -> List[int]:
        return self.topology.neighbors(node)

    def _pending(self, candidates: Sequence[int]) -> List[int]:
        return [
            peer
            for peer in candidates
            if peer != SERVER_ID and peer in self.sim.alive and not self.sim.is_finished(peer)
        ]

    def _round_robin(self, node: int, candidates: Sequence[int]):
        if not candidates:
            return
        start = self.cursor.get(node, 0) % len(candidates)
        for offset in range(len(candidates)):
            position = (start + offset) % len(candidates)
            self.cursor[node] = position + 1
            yield candidates[position]


class TnncProtocol(DistributionProtocol):
    """Rarest-first chunk exchange over the mesh, or down a BFS tree."""

    kind = ProtocolKind.TNNC

    def __init__(self, sim: Simulation) -> None:
        super().__init__(sim)
        chunk_count = self.plan.chunk_count
        self.holdings: Dict[int, np.ndarray] = {
            node: np.zeros(chunk_count, dtype=bool) for node in self.topology.graph.nodes
        }
        self.holdings[SERVER_ID][:] = True
        self.inflight: Dict[int, Set[int]] = {node: set() for node in self.topology.graph.nodes}
        self.mode = TnncMode(self.config.tnnc_mode)
        self.children: Dict[int, List[int]] = {}

    def _rebuild_tree(self) -> None:
        live = self.topology.graph.subgraph(self.sim.alive | {SERVER_ID})
        tree = nx.bfs_tree(live, SERVER_ID, sort_neighbors=sorted)
        self.children = {node: sorted(tree.successors(node)) for node in tree.nodes}

    def start(self) -> None:
        if self.mode is TnncMode.TREE:
            self._rebuild_tree()

    def join(self, peer: int) -> None:
        if self.mode is TnncMode.TREE:
            self._rebuild_tree()

    def leave(self, peer: int) -> None:
        if self.mode is TnncMode.TREE:
            self._rebuild_tree()

    def _recipients(self, node: int) -> List[int]:
        if self.mode is TnncMode.TREE:
            return self._pending(self.children.get(node, []))
        return self._pending(self.topology.neighbors(node))

    def next_upload(self, node: int) -> Optional[UploadAction]:
        holding = self.holdings[node]
        if not holding.any():
            return None
        for receiver in self._round_robin(node, self._recipients(node)):
            offered = holding.copy()
            offered[list(self.inflight[receiver])] = False
            neighbor_holdings = [
                self.holdings[n]
                for n in self.topology.neighbors(receiver)
                if n == SERVER_ID or n in self.sim.alive
            ]
            chunk = tnnc_step(~self.holdings[receiver], neighbor_holdings, self.rng, offered)
            if chunk is None:
                continue
            self.inflight[receiver].add(chunk)
            copy = Copy(
                receiver,
                self.plan.chunk_size,
                0,
                TransferKind.CHUNK,
                chunk,
                chunk,
                chunk,
            )
            return UploadAction(node, [copy])
        return None

    def delivered(self, src: int, copy: Copy, lost: bool) -> bool:
        receiver, chunk = copy.dst, copy.packet
        self.inflight[receiver].discard(chunk)
        if lost:
            return False
        holding = self.holdings[receiver]
        innovative = not holding[chunk]
        holding[chunk] = True
        self.topology.profiles[src].add_contribution(copy.payload_bytes)
        if innovative:
            segment = self.plan.segment_of(chunk)
            span = self.plan.segment_chunks(segment)
            if holding[span.start : span.stop].all():
                self.sim.trace.mark_segment(receiver, segment, self.sim.now)
            if holding.all():
                self.sim.finish_peer(receiver)
        return innovative

    def aborted(self, src: int, copy: Copy) -> None:
        self.inflight[copy.dst].discard(copy.packet)

    def content_of(self, peer: int) -> Optional[bytes]:
        if self.sim.chunks is None or not self.holdings[peer].all():
            return None
        return join_content(self.sim.chunks, self.plan, self.field)


class FncmProtocol(DistributionProtocol):
    """Flat random linear network coding, one generation per segment."""

    kind = ProtocolKind.FNCM

    def __init__(self, sim: Simulation) -> None:
        super().__init__(sim)
        self.segments: List[PacketGroup] = []
        for segment in range(self.plan.segment_count):
            span = self.plan.segment_chunks(segment)
            natives = None if sim.chunks is None else sim.chunks[span.start : span.stop]
            (group,) = form_packet_groups(
                len(span),
                len(span),
                natives=natives,
                first_group_id=segment,
                first_chunk=span.start,
                segment=segment,
            )
            self.segments.append(group)

        self.decoders: Dict[int, List[Decoder]] = {}
        for node in self.topology.graph.nodes:
            self.decoders[node] = [
                Decoder(g.group_id, g.group_size, self.field, g.payload_length)
                for g in self.segments
            ]
        for group, decoder in zip(self.segments, self.decoders[SERVER_ID]):
            for slot in range(group.group_size):
                decoder.insert(encode(group, unit_vector(group.group_size, slot, self.field), self.field))

        self.inflight: Dict[Tuple[int, int], int] = {}
        self.decoded: Dict[int, int] = {node: 0 for node in self.topology.graph.nodes}
        self._span_cache: Dict[Tuple[int, int, int], Tuple[int, int, bool]] = {}

    def _helps(self, sender: int, receiver: int, segment: int) -> bool:
        """Whether the sender's span reaches outside the receiver's."""
        mine = self.decoders[sender][segment]
        theirs = self.decoders[receiver][segment]
        size = theirs.group_size
        if mine.rank == 0 or theirs.rank + self.inflight.get((receiver, segment), 0) >= size:
            return False
        if mine.rank == size or theirs.rank == 0:
            return True

        key = (sender, receiver, segment)
        cached = self._span_cache.get(key)
        if cached is not None and cached[:2] == (mine.rank, theirs.rank):
            return cached[2]
        outside = any(theirs.is_innovative(vector) for vector in mine.vectors())
        self._span_cache[key] = (mine.rank, theirs.rank, outside)
        return outside

    def next_upload(self, node: int) -> Optional[UploadAction]:
        for receiver in self._round_robin(node, self._pending(self.topology.neighbors(node))):
            for segment, group in enumerate(self.segments):
                if not self._helps(node, receiver, segment):
                    continue
                packet = fncm_step(self.decoders[node][segment], self.rng)
                if packet is None:
                    continue
                key = (receiver, segment)
                self.inflight[key] = self.inflight.get(key, 0) + 1
                copy = Copy(
                    receiver,
                    self.plan.chunk_size,
                    vector_bytes(group.group_size, self.field),
                    TransferKind.CODED,
                    segment,
                    packet,
                    packet.key(),
                )
                return UploadAction(node, [copy])
        return None

    def _settle(self, copy: Copy) -> None:
        key = (copy.dst, copy.group_id)
        self.inflight[key] = max(0, self.inflight.get(key, 0) - 1)

    def delivered(self, src: int, copy: Copy, lost: bool) -> bool:
        self._settle(copy)
        if lost:
            return False
        decoder = self.decoders[copy.dst][copy.group_id]
        if decoder.is_complete():
            return False
        innovative = decoder.insert(copy.packet)
        self.topology.profiles[src].add_contribution(copy.payload_bytes)
        if innovative and decoder.is_complete():
            self.sim.trace.mark_segment(copy.dst, copy.group_id, self.sim.now)
            self.decoded[copy.dst] += 1
            if self.decoded[copy.dst] == len(self.segments):
                self.sim.finish_peer(copy.dst)
        return innovative

    def aborted(self, src: int, copy: Copy) -> None:
        self._settle(copy)

    def content_of(self, peer: int) -> Optional[bytes]:
        if self.sim.chunks is None:
            return None
        decoded = [(g, self.decoders[peer][g.group_id].solve()) for g in self.segments]
        return reassemble(decoded, self.plan, self.field)


@dataclass
class _Holding:
    decoder: Decoder
    held: Set[int] = field(default_factory=set)
    inflight: Set[int] = field(default_factory=set)

    @property
    def rank(self) -> int:
        return self.decoder.rank

    def complete(self) -> bool:
        return self.decoder.is_complete()

    def has_room(self) -> bool:
        return not self.complete() and self.rank + len(self.inflight) < self.decoder.group_size

    def known(self) -> Set[int]:
        return self.held | self.inflight


class DsncProtocol(DistributionProtocol):
    """Native packets first, then group-by-group coded delivery through super-peers.

    Every packet a peer ever holds carries a vector of the shared MDS
    universe, and no peer is sent a vector it holds or awaits while it has
    room below full rank. Any set of at most n such vectors is independent,
    so every delivery is innovative.

    Coded traffic is held to the frontier group and the groups before it.
    The frontier moves on only once every live peer has decoded it.
    """

    kind = ProtocolKind.DSNC

    def __init__(self, sim: Simulation) -> None:
        super().__init__(sim)
        self.n = self.config.group_size
        self.groups = plan_packet_groups(self.plan, self.n, sim.chunks)
        limit = self.config.universe_limit
        if limit is None and self.field.q > TABLE_MUL_MAX_Q:
            limit = WIDE_FIELD_UNIVERSE
        self.universe = build_vector_pool(self.n, self.field, limit=limit)
        self.overhead = vector_bytes(self.n, self.field)
        self.phase = Phase.NPTP
        self.grouping: Optional[Grouping] = None
        self.sessions: Dict[Tuple[int, int], GroupSession] = {}
        self.frontier = 0

        self.chunk_slot: Dict[int, Tuple[int, int]] = {}
        for group in self.groups:
            for slot in range(group.real_count):
                self.chunk_slot[group.chunk_index(slot)] = (group.group_id, slot)

        nptp = self.config.nptp_packets
        if nptp is None:
            nptp = self.config.chunks_per_segment
        self.natives = list(range(min(nptp, self.plan.chunk_count)))
        self.natives_delivered: Set[int] = set()
        self.natives_inflight: Set[int] = set()

        self.state: Dict[int, List[_Holding]] = {}
        self.decoded: Dict[int, int] = {}
        for node in self.topology.graph.nodes:
            self.state[node] = [self._empty_holding(g) for g in self.groups]
            self.decoded[node] = 0
        for group, holding in zip(self.groups, self.state[SERVER_ID]):
            for slot in range(group.real_count):
                self._absorb(holding, group, self.universe.unit_index(slot))
        self.decoded[SERVER_ID] = len(self.groups)

    def _empty_holding(self, group: PacketGroup) -> _Holding:
        holding = _Holding(Decoder(group.group_id, self.n, self.field, group.payload_length))
        for slot in group.padding:
            self._absorb(holding, group, self.universe.unit_index(slot))
        return holding

    def _packet(self, group: PacketGroup, index: int) -> CodedPacket:
        return encode(group, self.universe.vector(index), self.field, vector_id=index)

    def _absorb(self, holding: _Holding, group: PacketGroup, index: int) -> bool:
        holding.held.add(index)
        return holding.decoder.insert(self._packet(group, index))

    def _alive(self, node: int) -> bool:
        return node == SERVER_ID or node in self.sim.alive

    def _same_domain(self, a: int, b: int) -> bool:
        profiles = self.topology.profiles
        return profiles[a].in_campus == profiles[b].in_campus

    def _open_groups(self) -> List[int]:
        """The frontier group first, then the groups before it that late joiners may still lack."""
        if self.frontier >= len(self.groups):
            return list(range(len(self.groups)))
        return [self.frontier] + list(range(self.frontier))

    def _advance(self) -> None:
        moved = False
        while self.frontier < len(self.groups) and all(
            self.state[peer][self.frontier].complete() for peer in self.sim.alive
        ):
            self.sessions.pop((SERVER_ID, self.frontier), None)
            self.frontier += 1
            moved = True
        if moved:
            log.debug("group frontier at %d, t=%.6f", self.frontier, self.sim.now)
            self.sim.wake(self.sim.alive | {SERVER_ID})

    # phases

    def start(self) -> None:
        if not self.natives:
            self.sim.request_phase_transition()

    def phase_transition(self) -> None:
        if self.phase is Phase.CPTP:
            return
        self.phase = Phase.CPTP
        profiles = self.topology.profiles
        live = sorted(self.sim.alive)
        for peer in live:
            bitmap = profiles[peer].content_bitmap
            for chunk, (g, slot) in self.chunk_slot.items():
                if chunk < bitmap.size:
                    bitmap[chunk] = self.universe.unit_index(slot) in self.state[peer][g].held

        campus = [profiles[p] for p in live if profiles[p].in_campus]
        outside = [profiles[p] for p in live if not profiles[p].in_campus]
        options = dict(
            graph=self.topology.graph,
            threshold=self.config.score_threshold,
            max_group_size=self.config.max_group_size,
        )
        formed = form_groups(campus, first_group_id=0, **options)
        formed += form_groups(outside, first_group_id=len(formed), **options)
        self.grouping = Grouping(formed, profiles)
        self.grouping.assign_content([g.group_id for g in self.groups])
        log.info(
            "coded phase at t=%.3f: %d interest group(s), %d super-peer(s)",
            self.sim.now,
            len(formed),
            len(self.grouping.super_peers()),
        )
        self._advance()

    def join(self, peer: int) -> None:
        if self.grouping is not None:
            self.grouping.attach(
                peer,
                self.topology.graph,
                self.config.score_threshold,
                self.config.max_group_size,
            )

    def leave(self, peer: int) -> None:
        if self.grouping is not None:
            self.grouping.remove_peer(peer)
        for key in list(self.sessions):
            if key[0] == peer:
                del self.sessions[key]
            else:
                self.sessions[key].drop_peer(peer)
        if self.phase is Phase.CPTP:
            self._advance()

    # upload decisions

    def next_upload(self, node: int) -> Optional[UploadAction]:
        return dsnc_step(self, node)

    def _single(self, src: int, dst: int, g: int, index: int, kind: TransferKind) -> UploadAction:
        self.state[dst][g].inflight.add(index)
        group = self.groups[g]
        overhead = 0 if kind is TransferKind.NATIVE else self.overhead
        copy = Copy(
            dst,
            self.plan.chunk_size,
            overhead,
            kind,
            g,
            self._packet(group, index),
            (g, index),
        )
        return UploadAction(src, [copy], tag=(kind.value, g, index))

    def nptp_step(self, node: int) -> Optional[UploadAction]:
        if node == SERVER_ID:
            for chunk in self.natives:
                if chunk in self.natives_delivered or chunk in self.natives_inflight:
                    continue
                g, slot = self.chunk_slot[chunk]
                for receiver in self._round_robin(node, self._pending(self.topology.neighbors(node))):
                    holding = self.state[receiver][g]
                    if slot not in holding.known() and holding.has_room():
                        self.natives_inflight.add(chunk)
                        action = self._single(node, receiver, g, slot, TransferKind.NATIVE)
                        action.tag = ("server-native", g, slot, chunk)
                        return action
                return None
            return None

        neighbors = [peer for peer in self.topology.neighbors(node) if self._same_domain(node, peer)]
        for receiver in self._round_robin(node, self._pending(neighbors)):
            for g, group in enumerate(self.groups):
                mine = self.state[node][g]
                theirs = self.state[receiver][g]
                if not theirs.has_room():
                    continue
                options = sorted(
                    i for i in mine.held - theirs.known() if i < group.real_count
                )
                if options:
                    return self._single(node, receiver, g, options[0], TransferKind.NATIVE)
        return None

    def _fresh_index(self, holding: _Holding) -> Optional[int]:
        size = self.universe.size
        taken = holding.known()
        if len(taken) >= size:
            return None
        for _ in range(16):
            index = int(self.rng.integers(size))
            if index not in taken:
                return index
        free = [i for i in range(size) if i not in taken]
        return free[int(self.rng.integers(len(free)))]

    def _relay_index(self, sender: int, receiver: int, g: int) -> Optional[int]:
        theirs = self.state[receiver][g]
        if not theirs.has_room():
            return None
        mine = self.state[sender][g]
        if mine.complete():
            return self._fresh_index(theirs)
        options = sorted(mine.held - theirs.known())
        if not options:
            return None
        return options[int(self.rng.integers(len(options)))] if len(options) > 1 else options[0]

    def _relay_step(self, node: int, recipients: Sequence[int]) -> Optional[UploadAction]:
        groups = self._open_groups()
        for receiver in self._round_robin(node, recipients):
            for g in groups:
                index = self._relay_index(node, receiver, g)
                if index is not None:
                    return self._single(node, receiver, g, index, TransferKind.CODED)
        return None

    def _session_action(self, sender: int, g: int, targets: List[int]) -> Optional[UploadAction]:
        group = self.groups[g]
        session = self.sessions.get((sender, g))
        if session is None:
            lacks = np.zeros((len(targets), self.n), dtype=np.uint8)
            for row, peer in enumerate(targets):
                held = self.state[peer][g].held
                for slot in range(group.real_count):
                    lacks[row, slot] = self.universe.unit_index(slot) not in held
            session = GroupSession(
                group,
                ReceptionIndicator(tuple(targets), lacks),
                self.universe,
                self.rng,
                self.field,
                retry_cap=self.config.retry_cap,
            )
            self.sessions[(sender, g)] = session

        for peer in targets:
            holding = self.state[peer][g]
            if peer not in session.backlog.counts:
                session.add_peer(peer, holding.known(), self.n - holding.rank)
            for index in holding.known():
                session.note_holding(peer, index)
            session.sync_backlog(peer, self.n - holding.rank)

        eligible = [peer for peer in targets if self.state[peer][g].has_room()]
        if not eligible:
            return None
        try:
            transmission = session.next_transmission(eligible)
        except ProtocolStall:
            log.debug("group %d: no vector serves all of %s, narrowing", g, eligible)
            transmission = session.next_transmission(eligible[:1])
        if transmission is None:
            return None

        packet = session.packet(transmission)
        copies = []
        for peer in transmission.targets:
            self.state[peer][g].inflight.add(transmission.vector_index)
            copies.append(
                Copy(
                    peer,
                    self.plan.chunk_size,
                    self.overhead,
                    TransferKind.CODED,
                    g,
                    packet,
                    (g, transmission.vector_index),
                )
            )
        return UploadAction(sender, copies, tag=("session", sender, g))

    def _server_session_step(self) -> Optional[UploadAction]:
        g = self.frontier
        if g >= len(self.groups):
            return None
        targets = set()
        for in_campus in (True, False):
            owner = self.grouping.owner(in_campus, g)
            if owner is not None:
                targets.update(
                    sp for sp in owner.super_peers if self._alive(sp) and not self.state[sp][g].complete()
                )
        if not targets:
            self.sessions.pop((SERVER_ID, g), None)
            return None
        return self._session_action(SERVER_ID, g, sorted(targets))

    def _super_peer_session_step(self, node: int) -> Optional[UploadAction]:
        group = self.grouping.group_of(node)
        mates = [m for m in group.members if m != node and self._alive(m)]
        for g in self._open_groups():
            lacking = [m for m in mates if not self.state[m][g].complete()]
            if not lacking:
                self.sessions.pop((node, g), None)
                continue
            if not self.state[node][g].complete():
                continue
            action = self._session_action(node, g, lacking)
            if action is not None:
                return action
        return None

    def _relay_recipients(self, node: int) -> List[int]:
        """The server serves any pending peer; a peer serves only its own domain."""
        if node == SERVER_ID:
            return self._pending(sorted(self.sim.alive))
        recipients = {peer for peer in self.topology.neighbors(node) if self._same_domain(node, peer)}
        group = self.grouping.group_of(node)
        if group is not None:
            recipients.update(group.members)
            if node in group.super_peers:
                recipients.update(self.grouping.super_peers(in_campus=group.in_campus))
        recipients.discard(node)
        return self._pending(sorted(recipients))

    def cptp_step(self, node: int) -> Optional[UploadAction]:
        if self.grouping is None:
            return None
        if node == SERVER_ID:
            action = self._server_session_step()
        elif self.grouping.is_super_peer(node):
            action = self._super_peer_session_step(node)
        else:
            action = None
        if action is not None:
            return action
        return self._relay_step(node, self._relay_recipients(node))

    # completions

    def delivered(self, src: int, copy: Copy, lost: bool) -> bool:
        g, index = copy.key
        holding = self.state[copy.dst][g]
        holding.inflight.discard(index)
        if lost:
            return False
        if index in holding.held or holding.complete():
            return False
        holding.held.add(index)
        innovative = holding.decoder.insert(copy.packet)
        self.topology.profiles[src].add_contribution(copy.payload_bytes)
        if innovative and holding.complete():
            self._group_decoded(copy.dst, g)
        return innovative

    def _group_decoded(self, peer: int, g: int) -> None:
        self.decoded[peer] += 1
        if self.phase is Phase.CPTP and g == self.frontier:
            self._advance()
        segment = self.groups[g].segment
        if all(
            self.state[peer][other.group_id].complete()
            for other in self.groups
            if other.segment == segment
        ):
            self.sim.trace.mark_segment(peer, segment, self.sim.now)
        if self.decoded[peer] == len(self.groups):
            self.sim.finish_peer(peer)

    def aborted(self, src: int, copy: Copy) -> None:
        g, index = copy.key
        self.state[copy.dst][g].inflight.discard(index)

    def action_done(self, action: UploadAction, delivered: Set[int]) -> Optional[float]:
        if action.tag and action.tag[0] == "server-native":
            chunk = action.tag[3]
            self.natives_inflight.discard(chunk)
            if delivered:
                self.natives_delivered.add(chunk)
                if len(self.natives_delivered) == len(self.natives):
                    self.sim.request_phase_transition()
        elif action.tag and action.tag[0] == "session":
            session = self.sessions.get((action.tag[1], action.tag[2]))
            if session is not None and session.current is not None:
                session.report([peer for peer in delivered if peer in session.current.targets])
        if not delivered and self.config.retry_backoff > 0:
            return self.config.retry_backoff
        return None

    def content_of(self, peer: int) -> Optional[bytes]:
        if self.sim.chunks is None:
            return None
        decoded = [(g, self.state[peer][g.group_id].decoder.solve()) for g in self.groups]
        return reassemble(decoded, self.plan, self.field)

    def wake_targets(self, node: int) -> List[int]:
        targets = set(self.topology.neighbors(node)) | {SERVER_ID}
        if self.grouping is not None:
            group = self.grouping.group_of(node)
            if group is not None:
                targets.update(group.members)
                targets.update(self.grouping.super_peers(in_campus=group.in_campus))
        targets.discard(node)
        return sorted(targets)


PROTOCOLS = {
    ProtocolKind.TNNC: TnncProtocol,
    ProtocolKind.FNCM: FncmProtocol,
    ProtocolKind.DSNC: DsncProtocol,
}
