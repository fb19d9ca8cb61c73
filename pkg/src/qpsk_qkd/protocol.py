"""BB84 over QPSK: phase tables, outcome classes, decoding, sifting and QBER.

Phases are kept as exact quadrant labels. Every phase in this scheme is an
odd multiple of pi/4, so it is stored as that multiple modulo 8 and all
arithmetic stays in integers; radian values are only produced on request
for the physics layer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

__all__ = [
    "Basis",
    "Phase",
    "DeltaPhase",
    "OutcomeClass",
    "Outcome",
    "ClickEvent",
    "SiftRecord",
    "SiftedKey",
    "UndefinedRateError",
    "encode_alice",
    "encode_bob",
    "phase_difference",
    "classify_outcome",
    "decode_click",
    "sift",
    "qber",
]


class UndefinedRateError(ValueError):
    """A rate was requested over an empty population (0/0)."""


class Basis(enum.IntEnum):
    B1 = 0
    B2 = 1


class Phase(enum.Enum):
    """Modulator phase, valued in units of pi/4 modulo 8."""

    PLUS_PI_4 = 1
    PLUS_3PI_4 = 3
    MINUS_3PI_4 = 5
    MINUS_PI_4 = 7

    @property
    def radians(self) -> float:
        eighths = self.value if self.value < 4 else self.value - 8
        return eighths * math.pi / 4


class DeltaPhase(enum.Enum):
    """Phase difference, valued in quarter turns (units of pi/2)."""

    ZERO = 0
    HALF_PI = 1
    PI = 2
    THREE_HALF_PI = 3

    @property
    def radians(self) -> float:
        return self.value * math.pi / 2


class OutcomeClass(enum.Enum):
    DETERMINISTIC_D1 = "D1"
    DETERMINISTIC_D2 = "D2"
    RANDOM = "random"


class Outcome(enum.IntEnum):
    """What the two gated detectors reported in one gate."""

    NONE = 0
    D1 = 1
    D2 = 2
    BOTH = 3


_ALICE_TABLE = {
    (0, Basis.B1): Phase.PLUS_PI_4,
    (0, Basis.B2): Phase.MINUS_PI_4,
    (1, Basis.B1): Phase.MINUS_3PI_4,
    (1, Basis.B2): Phase.PLUS_3PI_4,
}
_BOB_TABLE = {Basis.B1: Phase.PLUS_PI_4, Basis.B2: Phase.MINUS_PI_4}

# D1 <=> zero phase difference, which on matched bases only bit 0 produces.
_CLICK_BITS = {Outcome.D1: 0, Outcome.D2: 1}


def _check_bit(bit: int) -> int:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return int(bit)


def encode_alice(bit: int, basis: Basis) -> Phase:
    """Alice's QPSK phase for a key bit sent in ``basis``."""
    return _ALICE_TABLE[_check_bit(bit), Basis(basis)]


def encode_bob(basis: Basis) -> Phase:
    """Bob's two-state measurement phase for ``basis``."""
    return _BOB_TABLE[Basis(basis)]


def phase_difference(phi_a: Phase, phi_b: Phase) -> DeltaPhase:
    eighths = (phi_a.value - phi_b.value) % 8
    # both inputs are odd multiples of pi/4, so the difference is even
    return DeltaPhase(eighths // 2)


def classify_outcome(delta: DeltaPhase) -> OutcomeClass:
    if delta is DeltaPhase.ZERO:
        return OutcomeClass.DETERMINISTIC_D1
    if delta is DeltaPhase.PI:
        return OutcomeClass.DETERMINISTIC_D2
    return OutcomeClass.RANDOM


def decode_click(outcome: Outcome) -> Optional[int]:
    """Bob's bit for a click, or None when the gate gives no usable bit."""
    return _CLICK_BITS.get(Outcome(outcome))


@dataclass(frozen=True)
class ClickEvent:
    gate_index: int
    outcome: Outcome

    def __post_init__(self) -> None:
        if self.gate_index < 0:
            raise ValueError("gate_index must be non-negative")


@dataclass(frozen=True)
class SiftRecord:
    gate_index: int
    alice_basis: Basis
    bob_basis: Basis
    alice_bit: int
    bob_bit: Optional[int] = None


@dataclass(frozen=True)
class SiftedKey:
    bits: tuple[int, ...]
    source_gates: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bits) != len(self.source_gates):
            raise ValueError("bits and source_gates differ in length")
        if any(b >= a for a, b in zip(self.source_gates[1:], self.source_gates)):
            raise ValueError("source_gates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def empty(cls) -> "SiftedKey":
        return cls((), ())

    def without(self, gates: Iterable[int]) -> "SiftedKey":
        """Copy of the key with the bits at ``gates`` removed."""
        drop = set(gates)
        kept = [(b, g) for b, g in zip(self.bits, self.source_gates) if g not in drop]
        return SiftedKey(tuple(b for b, _ in kept), tuple(g for _, g in kept))


def sift(records: Sequence[SiftRecord]) -> tuple[SiftedKey, SiftedKey]:
    """Keep gates where Bob has a bit and both used the same basis.

    Raises ValueError if ``records`` is not strictly ordered by gate index.
    """
    alice_bits: list[int] = []
    bob_bits: list[int] = []
    gates: list[int] = []
    previous = -1
    for rec in records:
        if rec.gate_index <= previous:
            raise ValueError(
                f"records not sorted by gate_index at gate {rec.gate_index}"
            )
        previous = rec.gate_index
        if rec.bob_bit is None or rec.alice_basis != rec.bob_basis:
            continue
        alice_bits.append(rec.alice_bit)
        bob_bits.append(rec.bob_bit)
        gates.append(rec.gate_index)
    shared = tuple(gates)
    return SiftedKey(tuple(alice_bits), shared), SiftedKey(tuple(bob_bits), shared)


def qber(alice_key: SiftedKey, bob_key: SiftedKey) -> float:
    """Fraction of positions where the two sifted keys disagree."""
    if alice_key.source_gates != bob_key.source_gates:
        raise ValueError("keys were sifted from different gates")
    if not alice_key.bits:
        raise UndefinedRateError("QBER of an empty key is undefined")
    errors = sum(a != b for a, b in zip(alice_key.bits, bob_key.bits))
    return errors / len(alice_key.bits)
