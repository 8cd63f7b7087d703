# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

import itertools
import struct
import unittest

import numpy as np
import pytest

from pydsnc.coding import (
    HEADER_SIZE,
    CodedPacket,
    CodingError,
    Decoder,
    DecoderNotReady,
    PoolExhausted,
    build_vector_pool,
    encode,
    form_packet_groups,
    join_content,
    matrix_rank,
    plan_packet_groups,
    reassemble,
    segment_content,
    split_content,
    unit_vector,
    vector_bytes,
)
from pydsnc.gf import FieldSpec, get_field


@pytest.fixture
def gf():
    return get_field(8)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def _decode_all(group, gf, rng):
    decoder = Decoder(group.group_id, group.group_size, gf, group.payload_length)
    while not decoder.is_complete():
        decoder.insert(encode(group, gf.random_elements(rng, group.group_size), gf))
    return decoder


class SegmentContentTest(unittest.TestCase):
    def test_counts(self):
        plan = segment_content(1000, 100, 4)
        assert plan.chunk_count == 10
        assert plan.segment_count == 3
        assert list(plan.segment_chunks(2)) == [8, 9]
        assert plan.segment_of(7) == 1

    def test_partial_last_chunk(self):
        plan = segment_content(1001, 100, 4)
        assert plan.chunk_count == 11

    def test_single_chunk(self):
        plan = segment_content(10, 100, 1)
        assert (plan.chunk_count, plan.segment_count) == (1, 1)

    def test_rejects_bad_sizes(self):
        with pytest.raises(CodingError):
            segment_content(0, 100, 4)
        with pytest.raises(CodingError):
            segment_content(100, 0, 4)
        with pytest.raises(CodingError):
            segment_content(100, 10, 0)
        with pytest.raises(CodingError):
            segment_content(100, 10, 256)


def test_split_and_join(gf, rng):
    data = rng.integers(0, 256, size=1001, dtype=np.uint8).tobytes()
    plan = segment_content(len(data), 100, 4)
    chunks = split_content(data, plan, gf)
    assert chunks.shape == (11, 100)
    assert not chunks[10, 1:].any()
    assert join_content(chunks, plan, gf) == data


def test_split_wide_symbols(rng):
    gf16 = get_field(16)
    data = rng.integers(0, 256, size=64, dtype=np.uint8).tobytes()
    plan = segment_content(len(data), 16, 2)
    chunks = split_content(data, plan, gf16)
    assert chunks.shape == (4, 8)
    assert join_content(chunks, plan, gf16) == data


def test_split_needs_byte_symbols():
    plan = segment_content(16, 4, 2)
    with pytest.raises(CodingError):
        split_content(bytes(16), plan, get_field(4))


class PacketGroupTest(unittest.TestCase):
    def test_exact_fit(self):
        groups = form_packet_groups(8, 4)
        assert [g.real_count for g in groups] == [4, 4]
        assert all(len(g.padding) == 0 for g in groups)

    def test_last_group_padded(self):
        groups = form_packet_groups(10, 4)
        assert [g.group_id for g in groups] == [0, 1, 2]
        assert groups[2].real_count == 2
        assert list(groups[2].padding) == [2, 3]
        assert groups[2].chunk_index(1) == 9

    def test_fewer_natives_than_group(self):
        (group,) = form_packet_groups(3, 4)
        assert group.real_count == 3
        assert list(group.padding) == [3]

    def test_padding_packets_are_zero(self):
        natives = np.arange(1, 31, dtype=np.uint8).reshape(3, 10)
        (group,) = form_packet_groups(3, 4, natives)
        assert np.array_equal(group.natives[:3], natives)
        assert not group.natives[3].any()

    def test_rejects_bad_input(self):
        with pytest.raises(CodingError):
            form_packet_groups(0, 4)
        with pytest.raises(CodingError):
            form_packet_groups(4, 0)
        with pytest.raises(CodingError):
            form_packet_groups(4, 2, np.zeros((3, 5), dtype=np.uint8))

    def test_plan_groups_per_segment(self):
        plan = segment_content(10 * 16, 16, 6)
        groups = plan_packet_groups(plan, 4)
        assert [(g.group_id, g.segment, g.real_count) for g in groups] == [
            (0, 0, 4),
            (1, 0, 2),
            (2, 1, 4),
        ]
        assert groups[2].first_chunk == 6


class VectorPoolTest(unittest.TestCase):
    def test_systematic_prefix(self):
        gf = get_field(4)
        pool = build_vector_pool(4, gf)
        assert pool.size == 17
        assert np.array_equal(pool.universe[:4], np.eye(4, dtype=gf.dtype))
        assert pool.unit_index(2) == 2

    def test_mds_exhaustive(self):
        for q in range(1, 5):
            gf = get_field(q)
            for n in range(1, 5):
                if gf.order < n:
                    continue
                universe = build_vector_pool(n, gf).universe
                for subset in itertools.combinations(range(len(universe)), n):
                    assert matrix_rank(gf, universe[list(subset)]) == n, (n, q, subset)

    def test_scalar_pool(self):
        pool = build_vector_pool(1, get_field(3))
        assert sorted(int(v) for v in pool.universe[:, 0]) == list(range(1, 8))

    def test_limit_is_prefix(self):
        gf = get_field(8)
        full = build_vector_pool(4, gf)
        limited = build_vector_pool(4, gf, limit=10)
        assert limited.size == 10
        assert np.array_equal(limited.universe, full.universe[:10])

    def test_limit_never_below_n(self):
        assert build_vector_pool(4, get_field(8), limit=2).size == 4

    def test_field_too_small(self):
        with pytest.raises(CodingError):
            build_vector_pool(5, get_field(2))

    def test_take_and_release(self):
        pool = build_vector_pool(2, get_field(2))
        pool.take(3)
        assert 3 not in pool.available
        assert 3 in pool.used
        with pytest.raises(PoolExhausted):
            pool.take(3)
        pool.release(3)
        assert pool.available == sorted(pool.available)
        assert 3 in pool.available

    def test_fresh_excludes(self):
        pool = build_vector_pool(2, get_field(2))
        pool.take(0)
        fresh = pool.fresh(exclude=[1])
        assert fresh.available == [0, 2, 3, 4]
        assert not fresh.used


class PacketWireTest(unittest.TestCase):
    def test_layout(self):
        gf = get_field(8)
        packet = CodedPacket(7, gf.array([1, 2, 3]), gf.array([9, 8, 7, 6]))
        data = packet.to_bytes(gf)
        assert len(data) == HEADER_SIZE + 3 + 4
        assert struct.unpack_from("<IH", data) == (7, 3)
        assert data[HEADER_SIZE:] == bytes([1, 2, 3, 9, 8, 7, 6])

    def test_wide_symbols_little_endian(self):
        gf16 = get_field(16)
        packet = CodedPacket(1, gf16.array([0x0102]), gf16.array([0xA0B0]))
        data = packet.to_bytes(gf16)
        assert data[HEADER_SIZE:] == bytes([0x02, 0x01, 0xB0, 0xA0])
        parsed = CodedPacket.from_bytes(data, gf16)
        assert int(parsed.coding_vector[0]) == 0x0102
        assert int(parsed.payload[0]) == 0xA0B0

    def test_parse(self):
        gf = get_field(8)
        packet = CodedPacket(70000, gf.array([5, 0, 1]), gf.array([1, 1]))
        parsed = CodedPacket.from_bytes(packet.to_bytes(gf), gf)
        assert parsed.group_id == 70000
        assert parsed.key() == packet.key()
        assert np.array_equal(parsed.payload, packet.payload)

    def test_truncated(self):
        with pytest.raises(CodingError):
            CodedPacket.from_bytes(b"\x00\x00", get_field(8))
        with pytest.raises(CodingError):
            CodedPacket.from_bytes(struct.pack("<IH", 0, 4) + b"\x01", get_field(8))

    def test_vector_bytes(self):
        assert vector_bytes(8, FieldSpec(8)) == 8
        assert vector_bytes(8, FieldSpec(16)) == 16
        assert vector_bytes(8, FieldSpec(2)) == 8


def test_encode_length_mismatch(gf):
    (group,) = form_packet_groups(4, 4, np.zeros((4, 3), dtype=np.uint8))
    with pytest.raises(CodingError):
        encode(group, [1, 2, 3], gf)


def test_encode_unit_vector_returns_native(gf, rng):
    natives = gf.random_elements(rng, 12).reshape(4, 3)
    (group,) = form_packet_groups(4, 4, natives)
    packet = encode(group, unit_vector(4, 2, gf), gf)
    assert np.array_equal(packet.payload, natives[2])


def test_decode_round_trip(gf, rng):
    for _ in range(50):
        n = int(rng.integers(1, 17))
        length = int(rng.integers(1, 129))
        natives = gf.random_elements(rng, n * length).reshape(n, length)
        (group,) = form_packet_groups(n, n, natives)
        decoder = _decode_all(group, gf, rng)
        assert np.array_equal(np.vstack(decoder.solve()), natives)


def test_decode_wide_field(rng):
    gf16 = get_field(16)
    natives = gf16.random_elements(rng, 5 * 7).reshape(5, 7)
    (group,) = form_packet_groups(5, 5, natives)
    decoder = _decode_all(group, gf16, rng)
    assert np.array_equal(np.vstack(decoder.solve()), natives)


class DecoderTest(unittest.TestCase):
    def setUp(self):
        self.gf = get_field(8)
        self.natives = np.arange(12, dtype=np.uint8).reshape(3, 4)
        (self.group,) = form_packet_groups(3, 3, self.natives)

    def packet(self, vector):
        return encode(self.group, vector, self.gf)

    def test_dependent_packet_is_not_innovative(self):
        decoder = Decoder(0, 3, self.gf, 4)
        assert decoder.insert(self.packet([1, 2, 0]))
        assert decoder.insert(self.packet([0, 1, 0]))
        assert not decoder.insert(self.packet([1, 0, 0]))
        assert not decoder.insert(self.packet([0, 0, 0]))
        assert decoder.rank == 2
        assert decoder.gap == 1

    def test_not_ready(self):
        decoder = Decoder(0, 3, self.gf, 4)
        decoder.insert(self.packet([1, 1, 1]))
        with pytest.raises(DecoderNotReady) as raised:
            decoder.solve()
        assert raised.value.gap == 2

    def test_wrong_group(self):
        decoder = Decoder(1, 3, self.gf, 4)
        with pytest.raises(CodingError):
            decoder.insert(self.packet([1, 0, 0]))

    def test_wrong_payload_length(self):
        decoder = Decoder(0, 3, self.gf, 5)
        with pytest.raises(CodingError):
            decoder.insert(self.packet([1, 0, 0]))

    def test_span_queries_do_not_mutate(self):
        decoder = Decoder(0, 3, self.gf, 4)
        decoder.insert(self.packet([1, 0, 0]))
        assert decoder.is_innovative([0, 1, 0])
        assert not decoder.is_innovative([5, 0, 0])
        assert not decoder.would_innovate([1, 1, 0], pending=[self.gf.array([0, 1, 0])])
        assert decoder.would_innovate([0, 0, 1], pending=[self.gf.array([0, 1, 0])])
        assert decoder.rank == 1

    def test_basis_and_recode_stay_in_span(self):
        decoder = Decoder(0, 3, self.gf, 4)
        decoder.insert(self.packet([1, 2, 0]))
        decoder.insert(self.packet([3, 0, 0]))
        rng = np.random.default_rng(0)
        for packet in decoder.basis() + [decoder.recode(rng) for _ in range(10)]:
            assert not decoder.is_innovative(packet.coding_vector)
            assert np.array_equal(packet.payload, encode(self.group, packet.coding_vector, self.gf).payload)

    def test_recode_empty(self):
        assert Decoder(0, 3, self.gf, 4).recode(np.random.default_rng(0)) is None

    def test_coefficient_copy(self):
        decoder = Decoder(0, 3, self.gf, 4)
        decoder.insert(self.packet([1, 2, 3]))
        clone = decoder.copy(coefficients_only=True)
        assert clone.rank == 1
        assert clone.payload_length == 0
        assert clone.insert(CodedPacket(0, self.gf.array([0, 1, 0]), self.gf.zeros(0)))
        assert decoder.rank == 1


def test_reassemble_drops_padding(gf, rng):
    data = rng.integers(0, 256, size=10 * 16 - 5, dtype=np.uint8).tobytes()
    plan = segment_content(len(data), 16, 6)
    groups = plan_packet_groups(plan, 4, split_content(data, plan, gf))
    decoded = [(group, _decode_all(group, gf, rng).solve()) for group in reversed(groups)]
    assert reassemble(decoded, plan, gf) == data
