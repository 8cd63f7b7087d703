# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Coupon-collector quantities, classical and coded, with Monte Carlo oracles.

In the classical game every draw is one of ``s`` coupons chosen uniformly; in
the coded game every draw is a uniform vector of ``GF(q)^s`` and a draw only
counts when it raises the rank of what has been collected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from pydsnc.coding import CodedPacket, Decoder
from pydsnc.gf import MAX_Q, get_field

log = logging.getLogger(__name__)

EXACT_BITS_LIMIT = 500
XOR_BASIS_MAX_S = 62


class CouponDomainError(ValueError): ...


def _check_size(s: int) -> None:
    if s < 1:
        raise CouponDomainError(f"s must be at least 1, got {s}")


def _check_index(i: int, s: int) -> None:
    _check_size(s)
    if not 1 <= i <= s:
        raise CouponDomainError(f"i must be in [1, {s}], got {i}")


def p_draw(i: int, s: int) -> float:
    """Probability that a draw is new when ``i - 1`` coupons are already held."""
    _check_index(i, s)
    return 1 - (i - 1) / s


def expected_wait(i: int, s: int) -> float:
    _check_index(i, s)
    return s / (s - i + 1)


def expected_sample(i: int, s: int) -> float:
    """Expected draws to collect ``i`` distinct coupons out of ``s``."""
    _check_index(i, s)
    return s * math.fsum(1 / (s - k) for k in range(i))


def expected_distinct(n: int, s: int) -> float:
    """Expected number of distinct coupons in a sample of ``n`` draws."""
    _check_size(s)
    if n < 0:
        raise CouponDomainError(f"n must be non-negative, got {n}")
    return s * (1 - (1 - 1 / s) ** n)


def distinct_lower_bound(n: int, s: int) -> float:
    """The exponential form ``s (1 - e^(-n/s))``, for comparison only."""
    _check_size(s)
    if n < 0:
        raise CouponDomainError(f"n must be non-negative, got {n}")
    return -s * math.expm1(-n / s)


def asymptotic_ratio(s: int) -> float:
    """``E[N_s] / (s ln s)``; tends to 1 as s grows."""
    if s < 2:
        raise CouponDomainError(f"s must be at least 2, got {s}")
    return expected_sample(s, s) / (s * math.log(s))


@dataclass(frozen=True)
class CouponModel:
    s: int
    q: int = 2

    def __post_init__(self):
        _check_size(self.s)
        if self.q < 2:
            raise CouponDomainError(f"q must be at least 2, got {self.q}")

    @property
    def exact(self) -> bool:
        return self.s * math.log2(self.q) <= EXACT_BITS_LIMIT


def coded_p_draw(i: int, model: CouponModel) -> float:
    """Probability that a random vector is innovative at rank ``i - 1``."""
    _check_index(i, model.s)
    return -math.expm1((i - 1 - model.s) * math.log(model.q))


def coded_expected_wait(i: int, model: CouponModel) -> float:
    """``q^s / (q^s - q^(i-1))``, exact while ``q^s`` stays small enough."""
    _check_index(i, model.s)
    if model.exact:
        total = model.q**model.s
        return float(Fraction(total, total - model.q ** (i - 1)))
    return 1 / coded_p_draw(i, model)


def coded_expected_sample(i: int, model: CouponModel) -> float:
    _check_index(i, model.s)
    return math.fsum(coded_expected_wait(j, model) for j in range(1, i + 1))


@dataclass(frozen=True)
class CouponStats:
    mean: float
    trials: int
    std_error: float

    def __post_init__(self):
        if self.trials < 1:
            raise CouponDomainError(f"trials must be at least 1, got {self.trials}")
        if self.std_error < 0:
            raise CouponDomainError(f"std_error must be non-negative, got {self.std_error}")

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> CouponStats:
        values = np.asarray(samples, dtype=np.float64)
        if values.size == 0:
            raise CouponDomainError("no samples")
        std_error = 0.0
        if values.size > 1:
            std_error = float(values.std(ddof=1) / math.sqrt(values.size))
        return cls(float(values.mean()), int(values.size), std_error)

    def _variance(self) -> float:
        return self.std_error**2 * self.trials

    def merge(self, other: CouponStats) -> CouponStats:
        """Pools two independent batches of trials."""
        n = self.trials + other.trials
        mean = (self.trials * self.mean + other.trials * other.mean) / n
        m2 = (
            (self.trials - 1) * self._variance()
            + (other.trials - 1) * other._variance()
            + self.trials * other.trials / n * (self.mean - other.mean) ** 2
        )
        variance = m2 / (n - 1) if n > 1 else 0.0
        return CouponStats(mean, n, math.sqrt(variance / n))

    def within(self, expected: float, sigmas: float = 2.0) -> bool:
        return abs(self.mean - expected) <= sigmas * self.std_error + 1e-12


def _classic_trial(s: int, target_i: int, block: int, rng: np.random.Generator) -> int:
    draws = rng.integers(s, size=block)
    while True:
        _, first = np.unique(draws, return_index=True)
        if first.size >= target_i:
            return int(np.sort(first)[target_i - 1]) + 1
        draws = np.concatenate([draws, rng.integers(s, size=block)])


def monte_carlo_classic(
    s: int, target_i: int, trials: int, rng: np.random.Generator
) -> CouponStats:
    """Simulates draws until ``target_i`` distinct coupons have been seen."""
    _check_index(target_i, s)
    if trials < 1:
        raise CouponDomainError(f"trials must be at least 1, got {trials}")
    block = int(math.ceil(2 * expected_sample(target_i, s))) + 16
    samples = [_classic_trial(s, target_i, block, rng) for _ in range(trials)]
    return CouponStats.from_samples(samples)


def _xor_basis_trial(s: int, target_i: int, rng: np.random.Generator) -> int:
    basis: Dict[int, int] = {}
    draws = 0
    while len(basis) < target_i:
        draws += 1
        vector = int(rng.integers(0, 1 << s, dtype=np.uint64))
        while vector:
            top = vector.bit_length() - 1
            if top not in basis:
                basis[top] = vector
                break
            vector ^= basis[top]
    return draws


def _field_trial(model: CouponModel, target_i: int, rng: np.random.Generator) -> int:
    field = get_field(model.q.bit_length() - 1)
    decoder = Decoder(0, model.s, field)
    empty = field.zeros(0)
    draws = 0
    while decoder.rank < target_i:
        draws += 1
        vector = field.random_elements(rng, model.s)
        decoder.insert(CodedPacket(0, vector, empty))
    return draws


def monte_carlo_coded(
    model: CouponModel, target_i: int, trials: int, rng: np.random.Generator
) -> CouponStats:
    """Simulates uniform draws from ``GF(q)^s`` until the rank reaches ``target_i``.

    Zero vectors are drawn like any other and never raise the rank.

    Raises:
        CouponDomainError: If q is not a power of two up to ``2^16``
    """
    _check_index(target_i, model.s)
    if trials < 1:
        raise CouponDomainError(f"trials must be at least 1, got {trials}")
    bits = model.q.bit_length() - 1
    if model.q != 1 << bits or bits > MAX_Q:
        raise CouponDomainError(f"q must be a power of two up to 2^{MAX_Q}, got {model.q}")

    if model.q == 2 and model.s <= XOR_BASIS_MAX_S:
        samples = [_xor_basis_trial(model.s, target_i, rng) for _ in range(trials)]
    else:
        samples = [_field_trial(model, target_i, rng) for _ in range(trials)]
    return CouponStats.from_samples(samples)


@dataclass(frozen=True)
class CouponRow:
    i: int
    classic_expected: float
    classic_simulated: float
    classic_std_error: float
    coded_expected: float
    coded_simulated: float
    coded_std_error: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def default_checkpoints(s: int) -> List[int]:
    return sorted({i for i in (1, s // 4, s // 2, (3 * s) // 4, s) if i >= 1})


def comparison_table(
    s: int,
    q: int,
    trials: int,
    rng: np.random.Generator,
    checkpoints: Optional[Sequence[int]] = None,
) -> List[CouponRow]:
    """Closed forms next to Monte Carlo means for a few collection targets."""
    model = CouponModel(s, q)
    rows = []
    for i in checkpoints or default_checkpoints(s):
        classic = monte_carlo_classic(s, i, trials, rng)
        coded = monte_carlo_coded(model, i, trials, rng)
        rows.append(
            CouponRow(
                i=i,
                classic_expected=expected_sample(i, s),
                classic_simulated=classic.mean,
                classic_std_error=classic.std_error,
                coded_expected=coded_expected_sample(i, model),
                coded_simulated=coded.mean,
                coded_std_error=coded.std_error,
            )
        )
        log.debug("coupon checkpoint i=%d: classic %.3f coded %.3f", i, classic.mean, coded.mean)
    return rows
