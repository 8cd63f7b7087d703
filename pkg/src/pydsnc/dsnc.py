# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Constraint-driven coded transmission for one packet group.

A sender keeps, per packet group, how many innovative packets every receiver
still needs (the backlog) and which coding vectors it may still pick (the
pool). Each pick comes from an MDS universe, so a vector no receiver already
holds is innovative to every receiver that is still short of full rank.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from json import JSONEncoder
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np

from pydsnc.coding import (
    CodedPacket,
    CodingError,
    CodingVectorPool,
    Decoder,
    FieldLike,
    PacketGroup,
    PoolExhausted,
    as_field,
    encode,
)

log = logging.getLogger(__name__)

DEFAULT_RETRY_CAP = 10
DEFAULT_MAX_ATTEMPTS = 1000
FALLBACK_DRAWS = 64

InnovationCheck = Callable[[int, np.ndarray], bool]
SendHook = Callable[[CodedPacket, Tuple[int, ...]], Iterable[int]]


class ConstraintError(RuntimeError): ...


class ProtocolStall(RuntimeError):
    def __init__(self, diagnostic: Dict[str, Any]) -> None:
        super().__init__(JSONEncoder(sort_keys=True).encode(diagnostic))
        self.diagnostic = diagnostic


@dataclass
class ReceptionIndicator:
    """``lacks[i][j]`` is 1 when ``peers[i]`` still lacks native packet ``j``."""

    peers: Tuple[int, ...]
    lacks: np.ndarray

    @classmethod
    def from_holdings(
        cls, group: PacketGroup, holdings: Mapping[int, Iterable[int]]
    ) -> ReceptionIndicator:
        peers = tuple(sorted(holdings))
        lacks = np.ones((len(peers), group.group_size), dtype=np.uint8)
        for row, peer in enumerate(peers):
            for slot in holdings[peer]:
                lacks[row, slot] = 0
        lacks[:, group.real_count :] = 0
        return cls(peers, lacks)

    def row(self, peer: int) -> np.ndarray:
        return self.lacks[self.peers.index(peer)]


@dataclass
class BacklogCounter:
    counts: Dict[int, int] = field(default_factory=dict)

    def __getitem__(self, peer: int) -> int:
        return self.counts[peer]

    def backlogged(self) -> List[int]:
        return sorted(peer for peer, count in self.counts.items() if count > 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def is_clear(self) -> bool:
        return all(count == 0 for count in self.counts.values())


@dataclass(frozen=True)
class DeliveryReport:
    vector_index: int
    receivers: Tuple[int, ...]


def constraint_init(
    group: PacketGroup,
    indicators: ReceptionIndicator,
    pool_universe: CodingVectorPool,
) -> Tuple[BacklogCounter, CodingVectorPool]:
    """Initializes the backlog counters and the available vector set.

    Every unit vector ``e_j`` whose native packet some peer already holds is
    left out of the available set, as are the unit vectors of padding slots.

    Raises:
        CodingError: If the indicator matrix does not match peers and slots
    """
    lacks = np.asarray(indicators.lacks, dtype=np.uint8)
    if lacks.shape != (len(indicators.peers), group.group_size):
        raise CodingError(
            f"indicators of shape {lacks.shape} do not cover "
            f"{len(indicators.peers)} peers x {group.group_size} slots"
        )
    if pool_universe.n != group.group_size:
        raise CodingError(
            f"vector universe has dimension {pool_universe.n}, group has {group.group_size} slots"
        )
    if np.any(lacks > 1):
        raise CodingError("reception indicators must be 0 or 1")

    lacks = lacks.copy()
    lacks[:, group.real_count :] = 0

    backlog = BacklogCounter(
        {peer: int(lacks[row].sum()) for row, peer in enumerate(indicators.peers)}
    )
    held_somewhere = [
        pool_universe.unit_index(slot)
        for slot in range(group.group_size)
        if lacks.shape[0] and not lacks[:, slot].all()
    ]
    return backlog, pool_universe.fresh(exclude=held_somewhere)


def draw_vector_index(
    pool: CodingVectorPool,
    rng: np.random.Generator,
    exclude: Optional[Set[int]] = None,
) -> int:
    """Like :func:`select_vector`, but returns the universe index of the draw.

    Raises:
        PoolExhausted: If no available vector remains outside ``exclude``
    """
    candidates = (
        pool.available
        if not exclude
        else [index for index in pool.available if index not in exclude]
    )
    if not candidates:
        raise PoolExhausted("coding-vector pool is exhausted")
    index = candidates[int(rng.integers(len(candidates)))]
    pool.take(index)
    return index


def select_vector(
    pool: CodingVectorPool,
    rng: np.random.Generator,
    exclude: Optional[Set[int]] = None,
) -> Tuple[np.ndarray, CodingVectorPool]:
    """Draws an available coding vector uniformly and moves it to the used set.

    Raises:
        PoolExhausted: If no available vector remains outside ``exclude``
    """
    index = draw_vector_index(pool, rng, exclude)
    return pool.vector(index), pool


def release_reusable(
    backlog: BacklogCounter, pool: CodingVectorPool, keep: Iterable[int] = ()
) -> List[int]:
    """Returns used vectors to the available set once all their holders are done.

    Vectors in ``keep`` (still in flight) stay used.
    """
    kept = set(keep)
    released = []
    for index in sorted(pool.used - kept):
        holders = pool.holders.get(index, set())
        if all(backlog.counts.get(peer, 0) == 0 for peer in holders):
            released.append(index)
    for index in released:
        pool.release(index)
    return released


def constraint_update(
    backlog: BacklogCounter,
    pool: CodingVectorPool,
    report: DeliveryReport,
) -> Tuple[BacklogCounter, CodingVectorPool]:
    """Applies one delivery report.

    Each backlogged receiver's counter drops by one; receivers that are
    already complete are left alone. A used vector becomes available again
    when every peer that received it has a zero backlog.

    Raises:
        ConstraintError: If the report names an unknown peer or packet, or a
            counter is found negative
    """
    if report.vector_index not in pool.used:
        raise ConstraintError(f"vector {report.vector_index} was never transmitted")

    holders = pool.holders.setdefault(report.vector_index, set())
    for peer in report.receivers:
        if peer not in backlog.counts:
            raise ConstraintError(f"delivery report names unknown peer {peer}")
        if backlog.counts[peer] < 0:
            raise ConstraintError(f"peer {peer} has negative backlog {backlog.counts[peer]}")
        holders.add(peer)
        if backlog.counts[peer] > 0:
            backlog.counts[peer] -= 1

    release_reusable(backlog, pool)
    return backlog, pool


@dataclass
class Transmission:
    group_id: int
    vector_index: Optional[int]
    vector: np.ndarray
    targets: Tuple[int, ...]
    attempt: int = 1
    delivered: Tuple[int, ...] = ()


class GroupSession:
    """Coded delivery of one packet group as a resumable state machine.

    ``next_transmission`` picks what to send to the backlogged peers, the
    caller delivers it however it likes, and ``report`` feeds back who got
    it. An undelivered vector is resent up to ``retry_cap`` times before it
    goes back to the pool.
    """

    def __init__(
        self,
        group: PacketGroup,
        indicators: ReceptionIndicator,
        pool_universe: CodingVectorPool,
        rng: np.random.Generator,
        field_like: FieldLike = None,
        retry_cap: int = DEFAULT_RETRY_CAP,
        innovation_check: Optional[InnovationCheck] = None,
    ) -> None:
        self.group = group
        self.group_id = group.group_id
        self.rng = rng
        self.field = as_field(field_like)
        self.retry_cap = retry_cap
        self.innovation_check = innovation_check
        self.backlog, self.pool = constraint_init(group, indicators, pool_universe)
        self.holdings: Dict[int, Set[int]] = {}
        # random fallback vectors each peer received; they have no universe index
        self.foreign: Dict[int, List[np.ndarray]] = {}
        for row, peer in enumerate(indicators.peers):
            self.holdings[peer] = self._held_units(indicators.lacks[row])
        self.current: Optional[Transmission] = None
        self.failures = 0
        self.log: List[Transmission] = []

    def _held_units(self, lacks_row: np.ndarray) -> Set[int]:
        return {
            self.pool.unit_index(slot)
            for slot in range(self.group.group_size)
            if slot >= self.group.real_count or not lacks_row[slot]
        }

    @property
    def done(self) -> bool:
        return self.backlog.is_clear()

    def add_peer(self, peer: int, held: Iterable[int], needed: int) -> None:
        """Registers a peer that showed up after the session started."""
        self.backlog.counts[peer] = max(0, needed)
        self.holdings[peer] = set(held)

    def drop_peer(self, peer: int) -> None:
        self.backlog.counts.pop(peer, None)
        self.holdings.pop(peer, None)
        self.foreign.pop(peer, None)
        for holders in self.pool.holders.values():
            holders.discard(peer)
        if self.current is not None and peer in self.current.targets:
            self.current.targets = tuple(t for t in self.current.targets if t != peer)
        release_reusable(self.backlog, self.pool, keep=self._in_flight())

    def _in_flight(self) -> Tuple[int, ...]:
        if self.current is None or self.current.vector_index is None:
            return ()
        return (self.current.vector_index,)

    def note_holding(self, peer: int, index: int) -> None:
        """Records a universe vector the peer obtained outside this session."""
        if peer in self.holdings:
            self.holdings[peer].add(index)

    def sync_backlog(self, peer: int, remaining: int) -> None:
        if peer in self.backlog.counts:
            self.backlog.counts[peer] = max(0, min(self.backlog.counts[peer], remaining))

    def _diagnostic(self, targets: Sequence[int], reason: str) -> Dict[str, Any]:
        return {
            "reason": reason,
            "group_id": self.group_id,
            "targets": list(targets),
            "backlog": {str(peer): count for peer, count in sorted(self.backlog.counts.items())},
            "available": len(self.pool.available),
            "used": len(self.pool.used),
            "universe": self.pool.size,
            "failures": self.failures,
        }

    def _span(self, peer: int) -> Decoder:
        span = Decoder(self.group_id, self.group.group_size, self.field)
        rows = [self.pool.vector(index) for index in sorted(self.holdings.get(peer, ()))]
        for vector in rows + self.foreign.get(peer, []):
            if span.is_complete():
                break
            span.insert(CodedPacket(self.group_id, np.asarray(vector), self.field.zeros(0)))
        return span

    def _draw(self, targets: Tuple[int, ...], blocked: Set[int]) -> int:
        """A pool vector innovative to every target.

        Holdings are universe indices, so excluding them is enough unless a
        target also holds a random fallback vector; those targets get an
        explicit span test and dependent draws are put back.
        """
        spans = [self._span(peer) for peer in targets if self.foreign.get(peer)]
        rejected = set(blocked)
        while True:
            index = draw_vector_index(self.pool, self.rng, exclude=rejected)
            vector = self.pool.vector(index)
            if all(span.is_innovative(vector) for span in spans):
                return index
            self.pool.release(index)
            rejected.add(index)

    def _pick(self, targets: Tuple[int, ...]) -> Transmission:
        blocked: Set[int] = set()
        for peer in targets:
            blocked |= self.holdings.get(peer, set())

        try:
            index = self._draw(targets, blocked)
            return Transmission(self.group_id, index, self.pool.vector(index), targets)
        except PoolExhausted:
            pass

        release_reusable(self.backlog, self.pool)
        rebuilt = [
            index
            for index in range(self.pool.size)
            if index not in blocked and index not in self.pool.used
        ]
        if rebuilt:
            log.debug("group %d: vector pool rebuilt with %d vectors", self.group_id, len(rebuilt))
            for index in rebuilt:
                self.pool.release(index)
            try:
                index = self._draw(targets, blocked)
                return Transmission(self.group_id, index, self.pool.vector(index), targets)
            except PoolExhausted:
                pass

        if self.innovation_check is not None:
            spans = {peer: self._span(peer) for peer in targets}
            for _ in range(FALLBACK_DRAWS):
                vector = self.field.random_elements(self.rng, self.group.group_size)
                if not vector.any():
                    continue
                if all(
                    spans[peer].is_innovative(vector) and self.innovation_check(peer, vector)
                    for peer in targets
                ):
                    log.warning("group %d: falling back to a random coding vector", self.group_id)
                    return Transmission(self.group_id, None, vector, targets)

        raise ProtocolStall(self._diagnostic(targets, "pool exhausted"))

    def next_transmission(self, eligible: Optional[Iterable[int]] = None) -> Optional[Transmission]:
        """Returns the next packet to send, or None when nothing is needed.

        Raises:
            ProtocolStall: If no vector is innovative to all targets
        """
        backlogged = self.backlog.backlogged()
        if eligible is not None:
            allowed = set(eligible)
            backlogged = [peer for peer in backlogged if peer in allowed]
        if not backlogged:
            return None
        targets = tuple(backlogged)

        if self.current is not None:
            held = set()
            for peer in targets:
                held |= self.holdings.get(peer, set())
            if self.current.vector_index is None or self.current.vector_index not in held:
                self.current = Transmission(
                    self.group_id,
                    self.current.vector_index,
                    self.current.vector,
                    targets,
                    attempt=self.current.attempt + 1,
                )
                return self.current
            self._abandon_current()

        self.current = self._pick(targets)
        return self.current

    def packet(self, transmission: Transmission) -> CodedPacket:
        return encode(self.group, transmission.vector, self.field, transmission.vector_index)

    def _abandon_current(self) -> None:
        if self.current is not None and self.current.vector_index is not None:
            index = self.current.vector_index
            if not self.pool.holders.get(index):
                self.pool.release(index)
        self.current = None

    def report(self, delivered: Iterable[int]) -> None:
        """Feeds back which targets received the current transmission.

        Raises:
            ConstraintError: If there is no transmission in flight, or a
                receiver was not one of its targets
        """
        if self.current is None:
            raise ConstraintError(f"group {self.group_id}: report without a transmission")
        current = self.current
        receivers = tuple(sorted(set(delivered)))
        unknown = [peer for peer in receivers if peer not in current.targets]
        if unknown:
            raise ConstraintError(
                f"group {self.group_id}: {unknown} were not targets of the transmission"
            )
        current.delivered = receivers
        self.log.append(current)

        if not receivers:
            self.failures += 1
            if current.attempt >= self.retry_cap:
                log.debug(
                    "group %d: vector %s undelivered after %d attempts",
                    self.group_id,
                    current.vector_index,
                    current.attempt,
                )
                self._abandon_current()
            return

        self.failures = 0
        self.current = None
        if current.vector_index is None:
            for peer in receivers:
                self.foreign.setdefault(peer, []).append(current.vector.copy())
                if self.backlog.counts.get(peer, 0) > 0:
                    self.backlog.counts[peer] -= 1
            return

        constraint_update(self.backlog, self.pool, DeliveryReport(current.vector_index, receivers))
        for peer in receivers:
            self.holdings.setdefault(peer, set()).add(current.vector_index)


def dsnc_transmit_group(
    group: PacketGroup,
    peers: Optional[Sequence[int]],
    indicators: ReceptionIndicator,
    rng: np.random.Generator,
    send: SendHook,
    pool_universe: CodingVectorPool,
    field_like: FieldLike = None,
    retry_cap: int = DEFAULT_RETRY_CAP,
    innovation_check: Optional[InnovationCheck] = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> List[Transmission]:
    """Delivers one packet group to completion with a synchronous send hook.

    ``send(packet, targets)`` returns the peers that received the packet.
    Only ``peers`` are served (all indicator peers when None).

    Raises:
        ProtocolStall: If the pool runs dry or ``max_attempts`` consecutive
            sends reach nobody
    """
    session = GroupSession(
        group,
        indicators,
        pool_universe,
        rng,
        field_like=field_like,
        retry_cap=retry_cap,
        innovation_check=innovation_check,
    )
    while True:
        transmission = session.next_transmission(peers)
        if transmission is None:
            break
        delivered = send(session.packet(transmission), transmission.targets)
        session.report(delivered)
        if session.failures >= max_attempts:
            raise ProtocolStall(session._diagnostic(transmission.targets, "nothing delivered"))
    log.debug("group %d finished after %d transmissions", group.group_id, len(session.log))
    return session.log
