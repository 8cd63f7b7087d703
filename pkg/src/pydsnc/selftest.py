# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""In-package invariant checks behind ``pydsnc selftest``.

Each check is small enough to run in seconds; the statistical and sweep
checks live in the ``slow`` test suite instead.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from pydsnc.coding import (
    Decoder,
    build_vector_pool,
    encode,
    form_packet_groups,
    matrix_rank,
)
from pydsnc.coupon import (
    CouponModel,
    coded_expected_sample,
    expected_sample,
    expected_wait,
    p_draw,
)
from pydsnc.gf import FieldSpec, get_field, reference_mul
from pydsnc.metrics import TransferKind
from pydsnc.protocols import ProtocolKind
from pydsnc.simulator import KIB, RunConfig, simulate

log = logging.getLogger(__name__)


class SelfTestFailure(AssertionError): ...


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise SelfTestFailure(message)


def check_field_axioms() -> None:
    for q in range(1, 5):
        gf = get_field(q)
        elements = range(gf.order)
        for a, b in itertools.product(elements, repeat=2):
            _expect(gf.mul(a, b) == gf.mul(b, a), f"q={q}: mul not commutative at ({a}, {b})")
            if a:
                _expect(gf.mul(a, gf.inv(a)) == 1, f"q={q}: bad inverse of {a}")
            for c in elements:
                _expect(
                    gf.mul(a, gf.mul(b, c)) == gf.mul(gf.mul(a, b), c),
                    f"q={q}: mul not associative at ({a}, {b}, {c})",
                )
                _expect(
                    gf.mul(a, b ^ c) == gf.mul(a, b) ^ gf.mul(a, c),
                    f"q={q}: not distributive at ({a}, {b}, {c})",
                )


def check_product_table() -> None:
    gf = get_field(8)
    spec = FieldSpec(8)
    for a in range(256):
        row = [reference_mul(a, b, spec) for b in range(256)]
        _expect(
            np.array_equal(gf.tables.mul[a], np.array(row, dtype=np.uint8)),
            f"product table row {a} disagrees with shift-and-reduce",
        )


def check_mds_pools() -> None:
    for q in range(1, 5):
        gf = get_field(q)
        for n in range(1, 5):
            if gf.order < n:
                continue
            universe = build_vector_pool(n, gf).universe
            for subset in itertools.combinations(range(len(universe)), n):
                _expect(
                    matrix_rank(gf, universe[list(subset)]) == n,
                    f"n={n} q={q}: vectors {subset} are dependent",
                )


def check_codec(trials: int = 200, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    gf = get_field(8)
    for _ in range(trials):
        n = int(rng.integers(1, 17))
        length = int(rng.integers(1, 257))
        natives = gf.random_elements(rng, n * length).reshape(n, length)
        group = form_packet_groups(n, n, natives)[0]
        decoder = Decoder(group.group_id, n, gf, length)
        while not decoder.is_complete():
            decoder.insert(encode(group, gf.random_elements(rng, n), gf))
        _expect(
            np.array_equal(np.vstack(decoder.solve()), natives),
            f"decoded group of {n}x{length} differs from its natives",
        )


def check_coupon_identities() -> None:
    for s in range(1, 30):
        for i in range(1, s + 1):
            _expect(
                abs(expected_wait(i, s) * p_draw(i, s) - 1.0) < 1e-12,
                f"reciprocal identity fails at i={i} s={s}",
            )
    for q in (2, 4, 16, 256):
        for s in range(3, 20):
            _expect(
                coded_expected_sample(s, CouponModel(s, q)) < expected_sample(s, s),
                f"coded collection not cheaper at q={q} s={s}",
            )
    limit = coded_expected_sample(8, CouponModel(8, 1 << 16))
    _expect(abs(limit - 8) < 1e-3, f"large-field collection cost {limit} is not close to 8")


def check_dsnc_innovation(seeds: Sequence[int] = (1, 2, 3)) -> None:
    for seed in seeds:
        config = RunConfig(
            protocol=ProtocolKind.DSNC,
            peers=12,
            seed=seed,
            content_size=64 * KIB,
            chunk_size=4 * KIB,
            chunks_per_segment=8,
            group_size=4,
            verify_content=True,
        )
        result = simulate(config)
        _expect(result.report.status == "ok", f"seed {seed}: run ended {result.report.status}")
        _expect(
            result.report.finished == result.report.joined,
            f"seed {seed}: {result.report.finished}/{result.report.joined} peers finished",
        )
        wasted = [
            r for r in result.trace.records
            if r.kind is TransferKind.CODED and r.delivered and not r.innovative
        ]
        _expect(not wasted, f"seed {seed}: {len(wasted)} non-innovative coded receptions")


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("field axioms, q <= 4", check_field_axioms),
    ("GF(2^8) product table", check_product_table),
    ("MDS coding-vector pools", check_mds_pools),
    ("codec round trip", check_codec),
    ("coupon identities", check_coupon_identities),
    ("DSNC innovation", check_dsnc_innovation),
]


def run_selftest(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """Runs the named checks (all by default) and collects their outcomes."""
    results = []
    for name, check in CHECKS:
        if names and name not in names:
            continue
        try:
            check()
        except SelfTestFailure as e:
            log.error("selftest %s failed: %s", name, e)
            results.append(CheckResult(name, False, str(e)))
        else:
            log.info("selftest %s passed", name)
            results.append(CheckResult(name, True))
    return results
