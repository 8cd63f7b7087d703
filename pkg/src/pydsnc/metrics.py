# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Hashable, Iterable, Iterator, List, Optional, Set, Tuple

import numpy as np

from pydsnc.coding import CodedPacket, Decoder, FieldLike, as_field
from pydsnc.gf import DEFAULT_Q, GaloisField, get_field

CSV_HEADER = (
    "protocol",
    "peers",
    "seed",
    "throughput",
    "avg_finish",
    "max_finish",
    "failure_rate",
    "mean_link_stress",
    "overhead_bytes",
    "access_link_bytes",
    "status",
)


class _JSONEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return json.JSONEncoder.default(self, o)


class TransferKind(str, Enum):
    CHUNK = "chunk"
    NATIVE = "native"
    CODED = "coded"


@dataclass(frozen=True)
class TraceRecord:
    time: float
    kind: TransferKind
    src: int
    dst: int
    group_id: int
    payload_bytes: int
    overhead_bytes: int
    innovative: bool
    delivered: bool
    crosses_access: bool
    packet: Hashable = None
    coefficients: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def wire_bytes(self) -> int:
        return self.payload_bytes + self.overhead_bytes

    def line(self) -> str:
        kind = self.kind.value if self.delivered else "lost"
        return (
            f"{self.time!r} {kind} {self.src} {self.dst} {self.group_id} "
            f"{self.wire_bytes} {int(self.innovative)}"
        )


@dataclass
class RunTrace:
    """Everything a finished run leaves behind for metric collection."""

    protocol: str
    peers: int
    seed: int
    segment_count: int = 1
    q: int = DEFAULT_Q
    records: List[TraceRecord] = field(default_factory=list)
    joins: Dict[int, float] = field(default_factory=dict)
    finishes: Dict[int, float] = field(default_factory=dict)
    departures: Dict[int, float] = field(default_factory=dict)
    segment_done: Dict[int, Dict[int, float]] = field(default_factory=dict)
    end_time: float = 0.0
    stalled: bool = False
    horizon_exceeded: bool = False

    def record(self, record: TraceRecord) -> None:
        self.records.append(record)

    def mark_segment(self, peer: int, segment: int, time: float) -> None:
        self.segment_done.setdefault(peer, {}).setdefault(segment, time)

    def lines(self) -> Iterator[str]:
        for record in self.records:
            yield record.line()


@dataclass
class MetricsReport:
    protocol: str
    peers: int
    seed: int
    throughput: float
    avg_finish_time: float
    max_finish_time: float
    failure_rate: float
    link_stress: Dict[str, float]
    mean_link_stress: float
    message_overhead: int
    per_segment_progress: List[float]
    access_link_traffic: int
    non_innovative: int
    joined: int
    finished: int
    makespan: float
    uploaded_bytes: int
    transmissions: int
    stalled: bool = False
    horizon_exceeded: bool = False

    @property
    def status(self) -> str:
        if self.stalled:
            return "stalled"
        if self.horizon_exceeded:
            return "horizon"
        return "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), cls=_JSONEncoder, sort_keys=True)

    @staticmethod
    def from_json(json_str: str) -> MetricsReport:
        return MetricsReport(**json.loads(json_str))

    def csv_row(self) -> Tuple[str, ...]:
        return (
            self.protocol,
            str(self.peers),
            str(self.seed),
            repr(self.throughput),
            repr(self.avg_finish_time),
            repr(self.max_finish_time),
            repr(self.failure_rate),
            repr(self.mean_link_stress),
            str(self.message_overhead),
            str(self.access_link_traffic),
            self.status,
        )


ACCESS_LINK_KEY = "access"


def hop_key(node: int) -> str:
    return f"hop-{node}"


def physical_links(record: TraceRecord) -> Tuple[str, ...]:
    """The shared links a transfer occupies.

    Every overlay link a node uses runs over that node's own access hop, and
    a transfer across the campus boundary also crosses the campus access link.
    """
    if record.crosses_access:
        return (hop_key(record.src), ACCESS_LINK_KEY, hop_key(record.dst))
    return (hop_key(record.src), hop_key(record.dst))


class _LinkLoad:
    """Packets seen on one link and how many of them are distinct.

    Uncoded packets are distinct when their keys differ. Coded packets are
    counted by the rank of their coding vectors per group, so a recombination
    of what already crossed the link adds nothing new.
    """

    def __init__(self, field: GaloisField) -> None:
        self.field = field
        self.total = 0
        self.keys: Set[Hashable] = set()
        self.spans: Dict[Tuple[int, int], Decoder] = {}

    def add(self, record: TraceRecord) -> None:
        self.total += 1
        if record.coefficients is None:
            self.keys.add(record.packet)
            return
        size = len(record.coefficients)
        span = self.spans.get((record.group_id, size))
        if span is None:
            span = self.spans[(record.group_id, size)] = Decoder(record.group_id, size, self.field)
        if not span.is_complete():
            span.insert(CodedPacket(record.group_id, record.coefficients, self.field.zeros(0)))

    @property
    def distinct(self) -> int:
        return len(self.keys) + sum(span.rank for span in self.spans.values())


def link_stress(records: Iterable[TraceRecord], field_like: FieldLike = None) -> Dict[str, float]:
    """Total packets over distinct packets, per physical link."""
    field = as_field(field_like)
    loads: Dict[str, _LinkLoad] = {}
    for record in records:
        for link in physical_links(record):
            load = loads.get(link)
            if load is None:
                load = loads[link] = _LinkLoad(field)
            load.add(record)
    return {link: loads[link].total / loads[link].distinct for link in sorted(loads)}


def segment_progress(trace: RunTrace) -> List[float]:
    """Mean share of each peer's download time spent on its k-th finished segment."""
    shares: List[List[float]] = [[] for _ in range(trace.segment_count)]
    for peer, finish in trace.finishes.items():
        start = trace.joins.get(peer, 0.0)
        total = finish - start
        done = sorted(trace.segment_done.get(peer, {}).values())
        if total <= 0 or len(done) != trace.segment_count:
            continue
        previous = start
        for k, time in enumerate(done):
            shares[k].append((time - previous) / total)
            previous = time
    return [float(np.mean(s)) if s else 0.0 for s in shares]


def failure_rate(trace: RunTrace) -> float:
    """Share of the interested population that left before finishing.

    Every peer of the population is interested, whether or not it joined in
    time; live peers that have not finished yet are not failures.
    """
    interested = max(trace.peers, len(trace.joins))
    failed = sum(1 for peer in trace.departures if peer not in trace.finishes)
    return failed / interested if interested else 0.0


def collect_metrics(trace: RunTrace, makespan: Optional[float] = None) -> MetricsReport:
    records = trace.records
    uploaded = sum(r.wire_bytes for r in records)
    makespan = trace.end_time if makespan is None else makespan

    durations = [trace.finishes[p] - trace.joins.get(p, 0.0) for p in sorted(trace.finishes)]
    joined = len(trace.joins)
    stress = link_stress(records, get_field(trace.q))

    return MetricsReport(
        protocol=trace.protocol,
        peers=trace.peers,
        seed=trace.seed,
        throughput=uploaded / makespan if makespan > 0 else 0.0,
        avg_finish_time=float(np.mean(durations)) if durations else 0.0,
        max_finish_time=float(max(durations)) if durations else 0.0,
        failure_rate=failure_rate(trace),
        link_stress=stress,
        mean_link_stress=float(np.mean(list(stress.values()))) if stress else 0.0,
        message_overhead=sum(r.overhead_bytes for r in records),
        per_segment_progress=segment_progress(trace),
        access_link_traffic=sum(r.wire_bytes for r in records if r.crosses_access),
        non_innovative=sum(1 for r in records if r.delivered and not r.innovative),
        joined=joined,
        finished=len(trace.finishes),
        makespan=makespan,
        uploaded_bytes=uploaded,
        transmissions=len(records),
        stalled=trace.stalled,
        horizon_exceeded=trace.horizon_exceeded,
    )
