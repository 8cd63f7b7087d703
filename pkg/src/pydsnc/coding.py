# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Segmentation, packet groups, coding-vector pools, encoding and decoding.

Content is cut into fixed-size chunks, chunks into segments, and the chunks of
each segment into packet groups of ``group_size`` slots (the unit that is coded
together). A coded packet carries its coding vector over the group's native
packets; a :class:`Decoder` keeps the received vectors in reduced row-echelon
form and recovers the natives once it reaches full rank.
"""

from __future__ import annotations

import bisect
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from pydsnc.gf import FieldSpec, GaloisField, get_field

log = logging.getLogger(__name__)

DEFAULT_SEGMENT_CAP = 256

HEADER_FORMAT = "<IH"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)

FieldLike = Union[GaloisField, FieldSpec, None]


class CodingError(ValueError): ...


class PoolExhausted(RuntimeError): ...


class DecoderNotReady(RuntimeError):
    def __init__(self, gap: int) -> None:
        super().__init__(f"decoder needs {gap} more innovative packet(s)")
        self.gap = gap


def as_field(field_like: FieldLike) -> GaloisField:
    if isinstance(field_like, GaloisField):
        return field_like
    if field_like is None:
        return get_field()
    return get_field(field_like.q, field_like.reduction_poly)


def vector_bytes(group_size: int, field_like: FieldLike = None) -> int:
    """Bytes a coding vector of ``group_size`` symbols occupies on the wire."""
    return group_size * as_field(field_like).spec.symbol_bytes


def _wire_dtype(field: GaloisField) -> np.dtype:
    return np.dtype("<u2") if field.spec.symbol_bytes == 2 else np.dtype(np.uint8)


# Segmentation


@dataclass(frozen=True)
class SegmentPlan:
    content_size: int
    chunk_size: int
    chunks_per_segment: int
    segment_count: int

    @property
    def chunk_count(self) -> int:
        return -(-self.content_size // self.chunk_size)

    def segment_chunks(self, segment: int) -> range:
        start = segment * self.chunks_per_segment
        return range(start, min(start + self.chunks_per_segment, self.chunk_count))

    def segment_of(self, chunk: int) -> int:
        return chunk // self.chunks_per_segment


def segment_content(
    content_size: int,
    chunk_size: int,
    chunks_per_segment: int,
    cap: int = DEFAULT_SEGMENT_CAP,
) -> SegmentPlan:
    """Plans the chunk/segment layout of a piece of content.

    Args:
        content_size: Content length in bytes
        chunk_size: Chunk length in bytes; the last chunk is zero-padded
        chunks_per_segment: Chunks coded together per segment, below ``cap``
        cap: Upper bound (exclusive) on chunks per segment

    Raises:
        CodingError: If any size is zero or negative, or the segment is too large
    """
    if content_size <= 0:
        raise CodingError(f"content_size must be positive, got {content_size}")
    if chunk_size <= 0:
        raise CodingError(f"chunk_size must be positive, got {chunk_size}")
    if not 1 <= chunks_per_segment < cap:
        raise CodingError(
            f"chunks_per_segment must be in [1, {cap}), got {chunks_per_segment}"
        )

    chunk_count = -(-content_size // chunk_size)
    segment_count = -(-chunk_count // chunks_per_segment)
    return SegmentPlan(content_size, chunk_size, chunks_per_segment, segment_count)


def split_content(data: bytes, plan: SegmentPlan, field_like: FieldLike = None) -> np.ndarray:
    """Cuts content into a ``chunk_count x symbols`` array of field symbols."""
    gf = as_field(field_like)
    if gf.q not in (8, 16):
        raise CodingError(f"payload symbols need q in {{8, 16}}, got q={gf.q}")
    if plan.chunk_size % gf.spec.symbol_bytes:
        raise CodingError(
            f"chunk_size {plan.chunk_size} is not a multiple of {gf.spec.symbol_bytes} bytes"
        )
    if len(data) != plan.content_size:
        raise CodingError(f"content is {len(data)} bytes, plan expects {plan.content_size}")

    padded = bytearray(plan.chunk_count * plan.chunk_size)
    padded[: len(data)] = data
    symbols = np.frombuffer(bytes(padded), dtype=_wire_dtype(gf)).astype(gf.dtype)
    return symbols.reshape(plan.chunk_count, -1)


def join_content(chunks: np.ndarray, plan: SegmentPlan, field_like: FieldLike = None) -> bytes:
    gf = as_field(field_like)
    raw = np.ascontiguousarray(chunks).astype(_wire_dtype(gf)).tobytes()
    return raw[: plan.content_size]


# Packet groups


@dataclass(eq=False)
class PacketGroup:
    group_id: int
    group_size: int
    real_count: int
    natives: np.ndarray
    first_chunk: int = 0
    segment: int = 0

    @property
    def padding(self) -> range:
        return range(self.real_count, self.group_size)

    @property
    def payload_length(self) -> int:
        return int(self.natives.shape[1])

    def chunk_index(self, slot: int) -> int:
        return self.first_chunk + slot


def form_packet_groups(
    n_native: int,
    group_size: int,
    natives: Optional[np.ndarray] = None,
    first_group_id: int = 0,
    first_chunk: int = 0,
    segment: int = 0,
) -> List[PacketGroup]:
    """Groups ``n_native`` packets into ``ceil(n_native / group_size)`` groups.

    The last group is topped up with all-zero padding packets when
    ``group_size`` does not divide ``n_native``.
    """
    if n_native < 1:
        raise CodingError(f"n_native must be at least 1, got {n_native}")
    if group_size < 1:
        raise CodingError(f"group_size must be at least 1, got {group_size}")
    if natives is None:
        natives = np.zeros((n_native, 0), dtype=np.uint8)
    if natives.shape[0] != n_native:
        raise CodingError(f"expected {n_native} native packets, got {natives.shape[0]}")

    groups = []
    for index in range(-(-n_native // group_size)):
        start = index * group_size
        real = min(group_size, n_native - start)
        block = np.zeros((group_size, natives.shape[1]), dtype=natives.dtype)
        block[:real] = natives[start : start + real]
        groups.append(
            PacketGroup(
                group_id=first_group_id + index,
                group_size=group_size,
                real_count=real,
                natives=block,
                first_chunk=first_chunk + start,
                segment=segment,
            )
        )
    return groups


def plan_packet_groups(
    plan: SegmentPlan, group_size: int, chunks: Optional[np.ndarray] = None
) -> List[PacketGroup]:
    """Applies :func:`form_packet_groups` segment by segment with global group ids."""
    groups: List[PacketGroup] = []
    for segment in range(plan.segment_count):
        span = plan.segment_chunks(segment)
        natives = None if chunks is None else chunks[span.start : span.stop]
        groups.extend(
            form_packet_groups(
                len(span),
                group_size,
                natives=natives,
                first_group_id=len(groups),
                first_chunk=span.start,
                segment=segment,
            )
        )
    return groups


# Linear algebra helpers


def row_reduce(field_like: FieldLike, matrix: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """Gauss-Jordan elimination; returns the RREF copy and its pivot columns."""
    gf = as_field(field_like)
    m = np.array(matrix, dtype=gf.dtype, copy=True)
    rows, cols = m.shape
    pivots: List[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nonzero = np.flatnonzero(m[r:, c])
        if nonzero.size == 0:
            continue
        p = r + int(nonzero[0])
        if p != r:
            m[[r, p]] = m[[p, r]]
        m[r] = gf.scale_row(gf.inv(int(m[r, c])), m[r])
        for k in range(rows):
            if k != r and m[k, c]:
                m[k] = gf.axpy(int(m[k, c]), m[r], m[k])
        pivots.append(c)
        r += 1
    return m, pivots


def matrix_rank(field_like: FieldLike, matrix: np.ndarray) -> int:
    return len(row_reduce(field_like, matrix)[1])


# Coding-vector pool


@dataclass(eq=False)
class CodingVectorPool:
    """An MDS vector set and the subset currently available for selection.

    ``universe`` rows ``0..n-1`` are the unit vectors ``e_1..e_n``.
    """

    universe: np.ndarray
    available: List[int] = field(default_factory=list)
    used: Set[int] = field(default_factory=set)
    holders: Dict[int, Set[int]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.universe.shape[1])

    @property
    def size(self) -> int:
        return int(self.universe.shape[0])

    def vector(self, index: int) -> np.ndarray:
        return self.universe[index]

    def unit_index(self, slot: int) -> int:
        return slot

    def fresh(self, exclude: Sequence[int] = ()) -> CodingVectorPool:
        excluded = set(exclude)
        return CodingVectorPool(
            universe=self.universe,
            available=[i for i in range(self.size) if i not in excluded],
        )

    def take(self, index: int) -> None:
        position = bisect.bisect_left(self.available, index)
        if position == len(self.available) or self.available[position] != index:
            raise PoolExhausted(f"vector {index} is not available")
        self.available.pop(position)
        self.used.add(index)
        self.holders.setdefault(index, set())

    def release(self, index: int) -> None:
        self.used.discard(index)
        self.holders.pop(index, None)
        position = bisect.bisect_left(self.available, index)
        if position == len(self.available) or self.available[position] != index:
            self.available.insert(position, index)


def build_vector_pool(
    n: int, field_like: FieldLike = None, limit: Optional[int] = None
) -> CodingVectorPool:
    """Builds an MDS coding-vector universe for groups of ``n`` packets.

    For n >= 2 the universe is the systematic form of the doubly-extended
    Reed-Solomon generator: the columns ``(1, a, ..., a^(n-1))`` for every
    field element ``a`` plus ``e_n``, row-reduced so that the first n columns
    become the unit vectors. Any n of its ``2^q + 1`` vectors are linearly
    independent. For n = 1 it is the set of nonzero scalars.

    Args:
        n: Vector dimension (group size)
        field_like: The field, or its spec
        limit: Optional cap on the universe size (never below n)

    Raises:
        CodingError: If the field has fewer than n elements
    """
    gf = as_field(field_like)
    if n < 1:
        raise CodingError(f"n must be at least 1, got {n}")
    if gf.order < n:
        raise CodingError(f"GF(2^{gf.q}) is too small for vectors of length {n}")

    if n == 1:
        universe = np.arange(1, gf.order, dtype=gf.dtype).reshape(-1, 1)
    else:
        count = gf.order + 1 if limit is None else max(n, min(limit, gf.order + 1))
        columns = [
            [gf.pow(alpha, k) for k in range(n)] for alpha in range(min(count, gf.order))
        ]
        if count > gf.order:
            columns.append([0] * (n - 1) + [1])
        generator = np.array(columns, dtype=gf.dtype).T
        systematic, _ = row_reduce(gf, generator)
        universe = np.ascontiguousarray(systematic.T)

    if limit is not None and n == 1:
        universe = universe[: max(1, limit)]

    log.debug("built coding-vector universe: n=%d q=%d size=%d", n, gf.q, len(universe))
    return CodingVectorPool(universe=universe, available=list(range(len(universe))))


# Packets


@dataclass(eq=False)
class CodedPacket:
    group_id: int
    coding_vector: np.ndarray
    payload: np.ndarray
    vector_id: Optional[int] = None

    @property
    def group_size(self) -> int:
        return int(self.coding_vector.shape[0])

    def key(self) -> Hashable:
        """Identity of the linear combination this packet carries."""
        return (self.group_id, self.coding_vector.tobytes())

    def to_bytes(self, field_like: FieldLike = None) -> bytes:
        wire = _wire_dtype(as_field(field_like))
        return (
            struct.pack(HEADER_FORMAT, self.group_id, self.group_size)
            + self.coding_vector.astype(wire).tobytes()
            + self.payload.astype(wire).tobytes()
        )

    @staticmethod
    def from_bytes(data: bytes, field_like: FieldLike = None) -> CodedPacket:
        gf = as_field(field_like)
        if len(data) < HEADER_SIZE:
            raise CodingError(f"packet of {len(data)} bytes is shorter than its header")
        group_id, group_size = struct.unpack_from(HEADER_FORMAT, data)
        width = gf.spec.symbol_bytes
        vector_end = HEADER_SIZE + group_size * width
        if len(data) < vector_end or (len(data) - vector_end) % width:
            raise CodingError("truncated or misaligned coded packet")
        wire = _wire_dtype(gf)
        vector = np.frombuffer(data[HEADER_SIZE:vector_end], dtype=wire).astype(gf.dtype)
        payload = np.frombuffer(data[vector_end:], dtype=wire).astype(gf.dtype)
        return CodedPacket(group_id=group_id, coding_vector=vector, payload=payload)


def encode(
    group: PacketGroup,
    vector: Sequence[int],
    field_like: FieldLike = None,
    vector_id: Optional[int] = None,
) -> CodedPacket:
    """Computes ``P_c = sum_i c_i * p_i`` over the group's native packets.

    Raises:
        CodingError: If the vector length differs from the group size
    """
    gf = as_field(field_like)
    coefficients = np.asarray(vector).astype(gf.dtype)
    if coefficients.shape != (group.group_size,):
        raise CodingError(
            f"coding vector has length {coefficients.size}, group {group.group_id} has {group.group_size} slots"
        )
    payload = gf.combine(coefficients, group.natives.astype(gf.dtype))
    return CodedPacket(group.group_id, coefficients.copy(), payload, vector_id)


class Decoder:
    """Progressive Gauss-Jordan decoder for one packet group."""

    def __init__(
        self,
        group_id: int,
        group_size: int,
        field_like: FieldLike = None,
        payload_length: int = 0,
    ) -> None:
        self.group_id = group_id
        self.group_size = group_size
        self.field = as_field(field_like)
        self.payload_length = payload_length
        self._coefficients: List[np.ndarray] = []
        self._payloads: List[np.ndarray] = []
        self._pivots: List[int] = []

    @property
    def rank(self) -> int:
        return len(self._pivots)

    @property
    def gap(self) -> int:
        return self.group_size - self.rank

    def is_complete(self) -> bool:
        return self.rank == self.group_size

    def _check_vector(self, vector: np.ndarray) -> np.ndarray:
        coefficients = np.asarray(vector).astype(self.field.dtype)
        if coefficients.shape != (self.group_size,):
            raise CodingError(
                f"coding vector has length {coefficients.size}, decoder expects {self.group_size}"
            )
        return coefficients

    def _reduce(self, vector: np.ndarray) -> np.ndarray:
        reduced = vector.copy()
        for row, pivot in zip(self._coefficients, self._pivots):
            c = int(reduced[pivot])
            if c:
                reduced ^= self.field.scale_row(c, row)
        return reduced

    def insert(self, packet: CodedPacket) -> bool:
        """Adds a packet; returns True when it was innovative.

        Raises:
            CodingError: On a group, vector length or payload length mismatch
        """
        if packet.group_id != self.group_id:
            raise CodingError(
                f"packet for group {packet.group_id} offered to decoder of group {self.group_id}"
            )
        vector = self._check_vector(packet.coding_vector).copy()
        if packet.payload.shape != (self.payload_length,):
            raise CodingError(
                f"payload has {packet.payload.size} symbols, decoder expects {self.payload_length}"
            )
        payload = packet.payload.astype(self.field.dtype).copy()

        for k, pivot in enumerate(self._pivots):
            c = int(vector[pivot])
            if c:
                vector ^= self.field.scale_row(c, self._coefficients[k])
                payload ^= self.field.scale_row(c, self._payloads[k])

        nonzero = np.flatnonzero(vector)
        if nonzero.size == 0:
            return False

        pivot = int(nonzero[0])
        scale = self.field.inv(int(vector[pivot]))
        vector = self.field.scale_row(scale, vector)
        payload = self.field.scale_row(scale, payload)

        for k in range(len(self._pivots)):
            c = int(self._coefficients[k][pivot])
            if c:
                self._coefficients[k] = self._coefficients[k] ^ self.field.scale_row(c, vector)
                self._payloads[k] = self._payloads[k] ^ self.field.scale_row(c, payload)

        position = bisect.bisect_left(self._pivots, pivot)
        self._pivots.insert(position, pivot)
        self._coefficients.insert(position, vector)
        self._payloads.insert(position, payload)
        return True

    def is_innovative(self, vector: Sequence[int]) -> bool:
        """Whether ``vector`` lies outside the span of the inserted vectors."""
        reduced = self._reduce(self._check_vector(np.asarray(vector)))
        return bool(np.any(reduced))

    def would_innovate(self, vector: Sequence[int], pending: Sequence[np.ndarray] = ()) -> bool:
        """Span test against the inserted vectors plus ``pending`` ones."""
        if not pending:
            return self.is_innovative(vector)
        scratch = self.copy(coefficients_only=True)
        for other in pending:
            scratch.insert(
                CodedPacket(self.group_id, np.asarray(other), scratch.field.zeros(0))
            )
        return scratch.is_innovative(vector)

    def copy(self, coefficients_only: bool = False) -> Decoder:
        clone = Decoder(
            self.group_id,
            self.group_size,
            self.field,
            0 if coefficients_only else self.payload_length,
        )
        clone._coefficients = [row.copy() for row in self._coefficients]
        clone._pivots = list(self._pivots)
        if coefficients_only:
            clone._payloads = [self.field.zeros(0) for _ in self._pivots]
        else:
            clone._payloads = [row.copy() for row in self._payloads]
        return clone

    def vectors(self) -> List[np.ndarray]:
        return list(self._coefficients)

    def basis(self) -> List[CodedPacket]:
        """The current RREF rows, each a valid coded packet of the group."""
        return [
            CodedPacket(self.group_id, coefficients.copy(), payload.copy())
            for coefficients, payload in zip(self._coefficients, self._payloads)
        ]

    def recode(self, rng: np.random.Generator) -> Optional[CodedPacket]:
        """A random nonzero combination of what this decoder holds."""
        if self.rank == 0:
            return None
        coefficients = self.field.random_elements(rng, self.rank)
        while not coefficients.any():
            coefficients = self.field.random_elements(rng, self.rank)
        vector = self.field.combine(coefficients, np.vstack(self._coefficients))
        payload = self.field.combine(
            coefficients,
            np.vstack(self._payloads).reshape(self.rank, self.payload_length),
        )
        return CodedPacket(self.group_id, vector, payload)

    def solve(self) -> List[np.ndarray]:
        """Returns the group's native packets, padding included.

        Raises:
            DecoderNotReady: If the decoder is still rank deficient
        """
        if not self.is_complete():
            raise DecoderNotReady(self.gap)
        return [payload.copy() for payload in self._payloads]


def unit_vector(n: int, slot: int, field_like: FieldLike = None) -> np.ndarray:
    vector = as_field(field_like).zeros(n)
    vector[slot] = 1
    return vector


def reassemble(
    decoded: Sequence[Tuple[PacketGroup, Sequence[np.ndarray]]],
    plan: SegmentPlan,
    field_like: FieldLike = None,
) -> bytes:
    """Concatenates decoded groups in chunk order, dropping padding packets."""
    rows = []
    for group, payloads in sorted(decoded, key=lambda item: item[0].first_chunk):
        rows.extend(payloads[: group.real_count])
    if not rows:
        return b""
    return join_content(np.vstack(rows), plan, field_like)
