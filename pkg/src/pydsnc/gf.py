# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Arithmetic over GF(2^q).

Elements are plain integers in ``[0, 2^q)``. Payload rows are numpy arrays of
symbols (``uint8`` for q <= 8, ``uint16`` above), and every coding operation in
the package goes through a :class:`GaloisField` built from a :class:`FieldSpec`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

MIN_Q = 1
MAX_Q = 16
TABLE_MUL_MAX_Q = 8

DEFAULT_Q = 8

DEFAULT_POLYNOMIALS = {
    1: 0x3,
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x89,
    8: 0x11B,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
}

FieldElement = int


class FieldError(ValueError): ...


def _degree(poly: int) -> int:
    return poly.bit_length() - 1


def _poly_mod(a: int, b: int) -> int:
    db = _degree(b)
    while a and _degree(a) >= db:
        a ^= b << (_degree(a) - db)
    return a


def is_irreducible(poly: int) -> bool:
    """Trial division by every polynomial of degree 1..deg/2 over GF(2)."""
    degree = _degree(poly)
    if degree < 1:
        return False
    if degree == 1:
        return True
    for divisor in range(2, 1 << (degree // 2 + 1)):
        if _poly_mod(poly, divisor) == 0:
            return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    q: int = DEFAULT_Q
    reduction_poly: int = 0

    def __post_init__(self):
        if not MIN_Q <= self.q <= MAX_Q:
            raise FieldError(f"q must be in [{MIN_Q}, {MAX_Q}], got {self.q}")

        if self.reduction_poly == 0:
            object.__setattr__(self, "reduction_poly", DEFAULT_POLYNOMIALS[self.q])

        if _degree(self.reduction_poly) != self.q:
            raise FieldError(
                f"reduction polynomial {self.reduction_poly:#x} does not have degree {self.q}"
            )
        if not is_irreducible(self.reduction_poly):
            raise FieldError(
                f"reduction polynomial {self.reduction_poly:#x} is reducible over GF(2)"
            )

    @property
    def order(self) -> int:
        return 1 << self.q

    @property
    def symbol_bytes(self) -> int:
        return 1 if self.q <= 8 else 2


def reference_mul(a: int, b: int, spec: FieldSpec) -> int:
    """Shift-and-reduce multiplication, used above q = 8 and as the table oracle."""
    result = 0
    top = 1 << spec.q
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= spec.reduction_poly
    return result


@dataclass(frozen=True)
class FieldTables:
    generator: int
    exp: np.ndarray
    log: np.ndarray
    inv: np.ndarray
    mul: Optional[np.ndarray] = None


def _find_generator(spec: FieldSpec) -> int:
    group_order = spec.order - 1
    if group_order == 1:
        return 1
    for candidate in range(2, spec.order):
        value, period = candidate, 1
        while value != 1:
            value = reference_mul(value, candidate, spec)
            period += 1
        if period == group_order:
            return candidate
    raise FieldError(f"no generator found for {spec}")  # no cov


def build_tables(spec: FieldSpec) -> FieldTables:
    """Builds exp/log/inverse tables, plus a full product table for q <= 8.

    Raises:
        FieldError: If the spec's reduction polynomial is reducible
    """
    if not is_irreducible(spec.reduction_poly):
        raise FieldError(f"reduction polynomial {spec.reduction_poly:#x} is reducible")

    dtype = np.uint8 if spec.q <= 8 else np.uint16
    group_order = spec.order - 1
    generator = _find_generator(spec)

    exp = np.zeros(group_order, dtype=np.int64)
    logs = np.zeros(spec.order, dtype=np.int64)
    value = 1
    for power in range(group_order):
        exp[power] = value
        logs[value] = power
        value = reference_mul(value, generator, spec)

    inv = np.zeros(spec.order, dtype=dtype)
    nonzero = np.arange(1, spec.order)
    inv[nonzero] = exp[(group_order - logs[nonzero]) % group_order]

    mul = None
    if spec.q <= TABLE_MUL_MAX_Q:
        a = np.arange(spec.order).reshape(-1, 1)
        b = np.arange(spec.order).reshape(1, -1)
        mul = exp[(logs[a] + logs[b]) % group_order].astype(dtype)
        mul[0, :] = 0
        mul[:, 0] = 0

    log.debug("built GF(2^%d) tables, generator %#x", spec.q, generator)
    return FieldTables(generator=generator, exp=exp, log=logs, inv=inv, mul=mul)


class GaloisField:
    """A GF(2^q) context: scalar operations plus row helpers over numpy symbols."""

    def __init__(self, spec: Optional[FieldSpec] = None) -> None:
        self.spec = spec or FieldSpec()
        self.tables = build_tables(self.spec)
        self.q = self.spec.q
        self.order = self.spec.order
        self.dtype = np.uint8 if self.q <= 8 else np.uint16

    def __repr__(self) -> str:
        return f"GaloisField(q={self.q}, poly={self.spec.reduction_poly:#x})"

    def element(self, value: int) -> FieldElement:
        if not 0 <= value < self.order:
            raise FieldError(f"{value} is not an element of GF(2^{self.q})")
        return value

    def add(self, a: FieldElement, b: FieldElement) -> FieldElement:
        return a ^ b

    sub = add

    def mul(self, a: FieldElement, b: FieldElement) -> FieldElement:
        if self.tables.mul is not None:
            return int(self.tables.mul[a, b])
        return reference_mul(a, b, self.spec)

    def inv(self, a: FieldElement) -> FieldElement:
        if a == 0:
            raise FieldError("0 has no multiplicative inverse")
        return int(self.tables.inv[a])

    def div(self, a: FieldElement, b: FieldElement) -> FieldElement:
        return self.mul(a, self.inv(b))

    def pow(self, a: FieldElement, exponent: int) -> FieldElement:
        if a == 0:
            return 1 if exponent == 0 else 0
        group_order = self.order - 1
        power = (int(self.tables.log[a]) * exponent) % group_order
        return int(self.tables.exp[power])

    def zeros(self, length: int) -> np.ndarray:
        return np.zeros(length, dtype=self.dtype)

    def array(self, values: Sequence[int]) -> np.ndarray:
        row = np.asarray(values, dtype=np.int64)
        if row.size and (row.min() < 0 or row.max() >= self.order):
            raise FieldError(f"values outside GF(2^{self.q})")
        return row.astype(self.dtype)

    def scale_row(self, c: FieldElement, row: np.ndarray) -> np.ndarray:
        """Returns ``c * row`` symbol-wise."""
        if c == 0:
            return np.zeros_like(row)
        if c == 1:
            return row.copy()
        if self.tables.mul is not None:
            return self.tables.mul[c][row]
        group_order = self.order - 1
        logs = self.tables.log[row]
        out = self.tables.exp[(logs + int(self.tables.log[c])) % group_order]
        return np.where(row == 0, 0, out).astype(self.dtype)

    def axpy(self, c: FieldElement, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Returns ``y + c * x``."""
        if c == 0:
            return y.copy()
        return y ^ self.scale_row(c, x)

    def combine(self, coefficients: Sequence[int], rows: np.ndarray) -> np.ndarray:
        """Linear combination ``sum_i coefficients[i] * rows[i]``."""
        out = np.zeros(rows.shape[1:], dtype=self.dtype)
        for c, row in zip(coefficients, rows):
            if c:
                out ^= self.scale_row(int(c), row)
        return out

    def random_elements(
        self, rng: np.random.Generator, size: int, nonzero: bool = False
    ) -> np.ndarray:
        low = 1 if nonzero else 0
        return rng.integers(low, self.order, size=size).astype(self.dtype)


@lru_cache(maxsize=None)
def get_field(q: int = DEFAULT_Q, reduction_poly: int = 0) -> GaloisField:
    """Shared, immutable field instances keyed by (q, polynomial)."""
    return GaloisField(FieldSpec(q, reduction_poly))


def gf_add(a: FieldElement, b: FieldElement, field: Optional[GaloisField] = None) -> FieldElement:
    field = field or get_field()
    return field.add(field.element(a), field.element(b))


def gf_mul(a: FieldElement, b: FieldElement, field: Optional[GaloisField] = None) -> FieldElement:
    field = field or get_field()
    return field.mul(field.element(a), field.element(b))


def gf_inv(a: FieldElement, field: Optional[GaloisField] = None) -> FieldElement:
    """Multiplicative inverse.

    Raises:
        FieldError: If ``a`` is 0 or outside the field
    """
    field = field or get_field()
    return field.inv(field.element(a))
