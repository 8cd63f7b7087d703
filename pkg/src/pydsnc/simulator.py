# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Deterministic discrete-event engine.

Time is continuous. Every in-flight copy is a transfer that holds a share of
its sender's upload, its receiver's download and, when it crosses the campus
boundary, the access link. Shares are recomputed (max-min fair) for the
connected set of transfers touched by every start, completion or abort, and
each transfer's completion event is rescheduled from its remaining bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from pydsnc.bandwidth import (
    ACCESS_LINK,
    TOLERANCE,
    Resource,
    allocate_bandwidth,
    download,
    overloaded,
    resource_loads,
    upload,
)
from pydsnc.coding import DEFAULT_SEGMENT_CAP, CodedPacket, segment_content, split_content
from pydsnc.dsnc import DEFAULT_RETRY_CAP, ProtocolStall
from pydsnc.gf import DEFAULT_Q, get_field
from pydsnc.metrics import MetricsReport, RunTrace, TraceRecord, collect_metrics
from pydsnc.overlay import (
    SERVER_ID,
    CapacityTier,
    ChurnKind,
    ChurnModel,
    DeparturePolicy,
    LinkFailureModel,
    Topology,
    TopologySpec,
    attach_peer,
    generate_topology,
    repair_overlay,
    sample_churn_events,
    sample_link_failure,
)
from pydsnc.protocols import PROTOCOLS, Copy, ProtocolKind, TnncMode, UploadAction

log = logging.getLogger(__name__)

KIB = 1024
MIB = 1024 * KIB


class CapacityViolation(RuntimeError): ...


class ConservationError(RuntimeError): ...


class EventKind(IntEnum):
    TRANSFER_COMPLETE = 0
    PEER_JOIN = 1
    PEER_LEAVE = 2
    PHASE_TRANSITION = 3
    RETRY = 4


@dataclass(order=True, frozen=True)
class Event:
    time: float
    kind: EventKind
    subject: int
    seq: int
    payload: Any = field(default=None, compare=False)


@dataclass(frozen=True)
class RunConfig:
    """One simulation run: a protocol, a population size and a seed."""

    protocol: ProtocolKind
    peers: int
    seed: int
    content_size: int = 1 * MIB
    chunk_size: int = 16 * KIB
    chunks_per_segment: int = 32
    segment_cap: int = DEFAULT_SEGMENT_CAP
    group_size: int = 8
    q: int = DEFAULT_Q
    overlay_degree: int = 4
    server_degree: int = 4
    campus_fraction: float = 0.3
    upload_capacity: float = 64.0 * KIB
    download_capacity: float = 256.0 * KIB
    server_upload: float = 256.0 * KIB
    access_capacity: float = 1.0 * MIB
    capacity_tiers: Tuple[CapacityTier, ...] = ()
    link_failure: float = 0.0
    churn: ChurnModel = ChurnModel()
    horizon: float = 86400.0
    max_group_size: int = 8
    score_threshold: float = 0.0
    retry_cap: int = DEFAULT_RETRY_CAP
    retry_backoff: float = 0.0
    tnnc_mode: TnncMode = TnncMode.MESH
    nptp_packets: Optional[int] = None
    verify_content: bool = False
    universe_limit: Optional[int] = None

    def topology_spec(self, chunk_count: int) -> TopologySpec:
        return TopologySpec(
            peers=self.peers,
            overlay_degree=self.overlay_degree,
            server_degree=self.server_degree,
            campus_fraction=self.campus_fraction,
            upload_capacity=self.upload_capacity,
            download_capacity=self.download_capacity,
            server_upload=self.server_upload,
            access_capacity=self.access_capacity,
            tiers=self.capacity_tiers,
            chunk_count=chunk_count,
        )


@dataclass
class Transfer:
    tid: int
    action: int
    src: int
    copy: Copy
    resources: Tuple[Resource, ...]
    crosses_access: bool
    remaining: float
    updated: float
    rate: float = 0.0
    version: int = 0
    scheduled: bool = False


@dataclass
class _ActionState:
    action: UploadAction
    pending: Set[int] = field(default_factory=set)
    delivered: Set[int] = field(default_factory=set)


@dataclass
class SimulationResult:
    report: MetricsReport
    trace: RunTrace
    topology: Topology


class Simulation:
    def __init__(self, config: RunConfig) -> None:
        self.config = config
        streams = np.random.SeedSequence(config.seed).spawn(5)
        topology_rng, churn_rng, protocol_rng, failure_rng, content_rng = (
            np.random.default_rng(s) for s in streams
        )
        self.topology_rng = topology_rng
        self.churn_rng = churn_rng
        self.protocol_rng = protocol_rng
        self.failure_rng = failure_rng
        self.failure_model = LinkFailureModel(config.link_failure)

        self.plan = segment_content(
            config.content_size, config.chunk_size, config.chunks_per_segment, config.segment_cap
        )
        self.field = get_field(config.q)
        self.topology = generate_topology(config.topology_spec(self.plan.chunk_count), topology_rng)

        self.chunks: Optional[np.ndarray] = None
        self.content_hash: Optional[str] = None
        if config.verify_content:
            content = content_rng.bytes(config.content_size)
            self.chunks = split_content(content, self.plan, self.field)
            self.content_hash = hashlib.sha256(content).hexdigest()

        self.trace = RunTrace(
            protocol=ProtocolKind(config.protocol).value,
            peers=config.peers,
            seed=config.seed,
            segment_count=self.plan.segment_count,
            q=config.q,
        )
        self.now = 0.0
        self.alive: Set[int] = set()
        self.finished: Set[int] = set()
        self.busy: Set[int] = set()
        self.backing_off: Set[int] = set()
        self.pending_joins = 0

        self.transfers: Dict[int, Transfer] = {}
        self.users: Dict[Resource, Set[int]] = {}
        self.actions: Dict[int, _ActionState] = {}
        self.capacities: Dict[Resource, float] = {ACCESS_LINK: self.topology.access_capacity}
        for node, profile in self.topology.profiles.items():
            self.capacities[upload(node)] = profile.upload_capacity
            self.capacities[download(node)] = profile.download_capacity

        self._heap: List[Event] = []
        self._seq = itertools.count()
        self._tids = itertools.count()
        self._aids = itertools.count()
        self._phase_requested = False
        self._wake: Set[int] = set()
        self._dirty: List[Resource] = []

        self.protocol = PROTOCOLS[ProtocolKind(config.protocol)](self)

    # bookkeeping used by protocols

    def schedule(self, time: float, kind: EventKind, subject: int, payload: Any = None) -> None:
        heapq.heappush(self._heap, Event(time, kind, subject, next(self._seq), payload))

    def wake(self, nodes: Iterable[int]) -> None:
        """Asks idle nodes to reconsider uploading once the current event is handled."""
        self._wake.update(nodes)

    def request_phase_transition(self) -> None:
        if not self._phase_requested:
            self._phase_requested = True
            self.schedule(self.now, EventKind.PHASE_TRANSITION, SERVER_ID)

    def is_finished(self, peer: int) -> bool:
        return peer in self.finished

    def finish_peer(self, peer: int) -> None:
        """Records a completed download and checks the content it decoded.

        Raises:
            ConservationError: If the peer's content differs from the source
        """
        if peer in self.finished:
            return
        self.finished.add(peer)
        self.trace.finishes[peer] = self.now
        log.debug("peer %d finished at t=%.6f", peer, self.now)

        if self.content_hash is not None:
            content = self.protocol.content_of(peer)
            if content is None or hashlib.sha256(content).hexdigest() != self.content_hash:
                raise ConservationError(f"peer {peer} finished with content that differs from the source")

        if self.config.churn.departure is DeparturePolicy.LEAVE:
            self.schedule(self.now, EventKind.PEER_LEAVE, peer)

    # transfers

    def _attach(self, transfer: Transfer) -> None:
        self.transfers[transfer.tid] = transfer
        for resource in transfer.resources:
            self.users.setdefault(resource, set()).add(transfer.tid)

    def _detach(self, transfer: Transfer) -> None:
        self.transfers.pop(transfer.tid, None)
        for resource in transfer.resources:
            users = self.users.get(resource)
            if users is not None:
                users.discard(transfer.tid)
                if not users:
                    del self.users[resource]

    def _component(self, seeds: Iterable[Resource]) -> List[int]:
        stack = list(seeds)
        seen: Set[Resource] = set()
        component: Set[int] = set()
        while stack:
            resource = stack.pop()
            if resource in seen:
                continue
            seen.add(resource)
            for tid in self.users.get(resource, ()):
                if tid not in component:
                    component.add(tid)
                    stack.extend(self.transfers[tid].resources)
        return sorted(component)

    def _replan(self, seeds: Iterable[Resource]) -> None:
        component = self._component(seeds)
        if not component:
            return
        demands = {}
        for tid in component:
            transfer = self.transfers[tid]
            elapsed = self.now - transfer.updated
            transfer.remaining = max(0.0, transfer.remaining - transfer.rate * elapsed)
            transfer.updated = self.now
            demands[tid] = transfer.resources

        rates = allocate_bandwidth(demands, self.capacities)
        excess = overloaded(resource_loads(demands, rates), self.capacities)
        if excess:
            raise CapacityViolation(f"t={self.now}: resources over capacity: {excess}")

        for tid in component:
            transfer = self.transfers[tid]
            rate = rates[tid]
            # an unchanged rate leaves the scheduled completion valid
            if transfer.scheduled and abs(rate - transfer.rate) <= TOLERANCE * transfer.rate:
                continue
            transfer.rate = rate
            transfer.version += 1
            transfer.scheduled = rate > 0
            if transfer.scheduled:
                finish = self.now + transfer.remaining / rate
                self.schedule(finish, EventKind.TRANSFER_COMPLETE, tid, transfer.version)

    def _flush(self) -> None:
        """Re-plans, once per event, every transfer sharing a resource that changed."""
        if self._dirty:
            seeds, self._dirty = self._dirty, []
            self._replan(seeds)

    def _start(self, action: UploadAction) -> None:
        aid = next(self._aids)
        state = _ActionState(action)
        self.actions[aid] = state
        self.busy.add(action.src)
        for copy in action.copies:
            crosses = self.topology.crosses_access(action.src, copy.dst)
            resources = (upload(action.src), download(copy.dst))
            if crosses:
                resources += (ACCESS_LINK,)
            transfer = Transfer(
                tid=next(self._tids),
                action=aid,
                src=action.src,
                copy=copy,
                resources=resources,
                crosses_access=crosses,
                remaining=float(copy.payload_bytes),
                updated=self.now,
            )
            self._attach(transfer)
            state.pending.add(transfer.tid)
            self._dirty.extend(resources)

    def _finish_action(self, aid: int) -> None:
        state = self.actions.pop(aid)
        src = state.action.src
        self.busy.discard(src)
        backoff = self.protocol.action_done(state.action, state.delivered)
        if backoff:
            self.backing_off.add(src)
            self.schedule(self.now + backoff, EventKind.RETRY, src)
        self._wake.add(src)

    def _record(self, transfer: Transfer, innovative: bool, delivered: bool) -> None:
        copy = transfer.copy
        coefficients = copy.packet.coding_vector if isinstance(copy.packet, CodedPacket) else None
        self.trace.record(
            TraceRecord(
                time=self.now,
                kind=copy.kind,
                src=transfer.src,
                dst=copy.dst,
                group_id=copy.group_id,
                payload_bytes=copy.payload_bytes,
                overhead_bytes=copy.overhead_bytes,
                innovative=innovative,
                delivered=delivered,
                crosses_access=transfer.crosses_access,
                packet=copy.key,
                coefficients=coefficients,
            )
        )

    # event handlers

    def _on_transfer_complete(self, event: Event) -> None:
        transfer = self.transfers.get(event.subject)
        if transfer is None or transfer.version != event.payload:
            return
        self._detach(transfer)
        self._dirty.extend(transfer.resources)

        lost = sample_link_failure(self.failure_model, self.failure_rng)
        innovative = self.protocol.delivered(transfer.src, transfer.copy, lost)
        self._record(transfer, innovative, not lost)

        dst = transfer.copy.dst
        self._wake.update((transfer.src, dst))
        self._wake.update(self.protocol.wake_targets(dst))

        state = self.actions[transfer.action]
        state.pending.discard(transfer.tid)
        if not lost:
            state.delivered.add(dst)
        if not state.pending:
            self._finish_action(transfer.action)

    def _connectable(self) -> Set[int]:
        if self.config.churn.departure is DeparturePolicy.LEAVE:
            return self.alive - self.finished
        return set(self.alive)

    def _on_join(self, peer: int) -> None:
        self.pending_joins -= 1
        if peer in self.alive or peer in self.trace.departures:
            return
        self.alive.add(peer)
        self.trace.joins[peer] = self.now
        # the initial population uses the generated overlay as is
        if self.now > 0:
            self._wake.update(attach_peer(self.topology, peer, self._connectable(), self.topology_rng))
        self.protocol.join(peer)
        log.debug("peer %d joined at t=%.6f", peer, self.now)
        self._wake.add(peer)
        self._wake.update(self.protocol.wake_targets(peer))

    def _on_leave(self, peer: int) -> None:
        if peer not in self.alive:
            return
        self._wake.update(self.protocol.wake_targets(peer))
        self.alive.discard(peer)
        self.busy.discard(peer)
        self.trace.departures[peer] = self.now

        affected = sorted(
            (t for t in self.transfers.values() if t.src == peer or t.copy.dst == peer),
            key=lambda t: t.tid,
        )
        for transfer in affected:
            self._detach(transfer)
            self._dirty.extend(transfer.resources)
            self.protocol.aborted(transfer.src, transfer.copy)
            self.actions[transfer.action].pending.discard(transfer.tid)
            self._wake.update((transfer.src, transfer.copy.dst))
        for aid in sorted({t.action for t in affected}):
            if aid in self.actions and not self.actions[aid].pending:
                self._finish_action(aid)

        self._wake.update(repair_overlay(self.topology, peer, self._connectable(), self.topology_rng))
        self.protocol.leave(peer)
        log.debug("peer %d left at t=%.6f", peer, self.now)

    def _on_phase_transition(self) -> None:
        self.protocol.phase_transition()
        self._wake.update(self.alive)
        self._wake.add(SERVER_ID)

    def _wake_nodes(self) -> None:
        while self._wake:
            nodes = sorted(self._wake)
            self._wake.clear()
            for node in nodes:
                if node in self.busy or node in self.backing_off:
                    continue
                if node != SERVER_ID and node not in self.alive:
                    continue
                action = self.protocol.next_upload(node)
                if action is not None and action.copies:
                    self._start(action)

    def _done(self) -> bool:
        return self.pending_joins == 0 and all(peer in self.finished for peer in self.alive)

    # main loop

    def run(self) -> RunTrace:
        config = self.config
        events = sample_churn_events(config.churn, self.topology.peers, config.horizon, self.churn_rng)
        for churn_event in events:
            if churn_event.kind is ChurnKind.JOIN:
                self.pending_joins += 1
                self.schedule(churn_event.time, EventKind.PEER_JOIN, churn_event.peer_id)
            else:
                self.schedule(churn_event.time, EventKind.PEER_LEAVE, churn_event.peer_id)

        log.info(
            "run %s: %d peers, seed %d, %d chunks in %d segment(s)",
            self.trace.protocol,
            config.peers,
            config.seed,
            self.plan.chunk_count,
            self.plan.segment_count,
        )
        self.protocol.start()

        completed = False
        hit_horizon = False
        try:
            while self._heap:
                event = heapq.heappop(self._heap)
                if event.time > config.horizon:
                    self.now = config.horizon
                    hit_horizon = True
                    break
                self.now = event.time
                if event.kind is EventKind.TRANSFER_COMPLETE:
                    self._on_transfer_complete(event)
                elif event.kind is EventKind.PEER_JOIN:
                    self._on_join(event.subject)
                elif event.kind is EventKind.PEER_LEAVE:
                    self._on_leave(event.subject)
                elif event.kind is EventKind.PHASE_TRANSITION:
                    self._on_phase_transition()
                else:
                    self.backing_off.discard(event.subject)
                    self._wake.add(event.subject)
                self._wake_nodes()
                self._flush()
                if self._done():
                    completed = True
                    break
        except ProtocolStall as stall:
            log.warning("run %s seed %d stalled: %s", self.trace.protocol, config.seed, stall)
            self.trace.stalled = True

        if not completed and not self.trace.stalled:
            completed = self._done()
            if not completed and hit_horizon:
                self.trace.horizon_exceeded = True
                log.warning("run %s seed %d hit the horizon at t=%s", self.trace.protocol, config.seed, config.horizon)
            elif not completed:
                self.trace.stalled = True
                log.warning("run %s seed %d stalled at t=%s", self.trace.protocol, config.seed, self.now)

        self.trace.end_time = self.now
        log.info(
            "run %s finished at t=%.3f: %d/%d peers done",
            self.trace.protocol,
            self.now,
            len(self.finished),
            len(self.trace.joins),
        )
        return self.trace


def simulate(config: RunConfig) -> SimulationResult:
    simulation = Simulation(config)
    trace = simulation.run()
    return SimulationResult(collect_metrics(trace), trace, simulation.topology)


def run(config: RunConfig) -> MetricsReport:
    """Runs one simulation and returns its metrics."""
    return simulate(config).report
