"""Monte Carlo model of the delayed self-homodyne link and its gated APDs.

Each gate carries one faint key pulse that beats against the time-multiplexed
reference at Bob's coupler. The two output ports see Poisson photoelectron
counts whose means follow the interference fringe; each gated detector clicks
when it sees at least one photoelectron or fires a dark count.

Imperfections:

* extinction ratio and polarization mismatch lower the fringe visibility;
* modulation error adds white Gaussian phase noise per gate;
* environmental drift is a Gaussian random walk on the interferometer phase,
  optionally pulled back to zero by a proportional feedback loop;
* dark counts are independent per detector per gate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy.signal import lfilter

from .protocol import Basis, ClickEvent, Outcome, SiftRecord, decode_click

__all__ = [
    "ChannelParams",
    "DetectorParams",
    "DriftState",
    "GateTrace",
    "visibility",
    "mu_total",
    "detector_means",
    "click_probability",
    "gate_event",
    "step_drift",
    "apply_feedback",
    "drift_path",
    "simulate_session",
]

# Alice phase in eighths of a turn, indexed [bit, basis]; Bob indexed [basis].
_ALICE_EIGHTHS = np.array([[1, 7], [5, 3]], dtype=np.int8)
_BOB_EIGHTHS = np.array([1, 7], dtype=np.int8)


@dataclass(frozen=True)
class ChannelParams:
    mu_key: float = 0.1
    ref_ratio: float = 1.0
    extinction_ratio: float = 0.0
    pol_mismatch: float = 0.0
    mod_phase_sigma: float = 0.0
    drift_sigma: float = 0.0
    feedback_gain: float = 0.0
    strong_reference: bool = False
    ref_gain_cap: float = 100.0

    def __post_init__(self) -> None:
        if not self.mu_key >= 0:
            raise ValueError("mu_key must be >= 0")
        if not self.ref_ratio >= 1:
            raise ValueError("ref_ratio must be >= 1")
        if not 0 <= self.extinction_ratio <= 1:
            raise ValueError("extinction_ratio must lie in [0, 1]")
        if not 0 <= self.pol_mismatch <= math.pi / 2:
            raise ValueError("pol_mismatch must lie in [0, pi/2]")
        if not self.mod_phase_sigma >= 0:
            raise ValueError("mod_phase_sigma must be >= 0")
        if not self.drift_sigma >= 0:
            raise ValueError("drift_sigma must be >= 0")
        if not 0 <= self.feedback_gain <= 1:
            raise ValueError("feedback_gain must lie in [0, 1]")
        if not self.ref_gain_cap >= 1:
            raise ValueError("ref_gain_cap must be >= 1")


@dataclass(frozen=True)
class DetectorParams:
    eta: float = 0.1
    p_dark: float = 0.0
    gate_rate: float = 1e6

    def __post_init__(self) -> None:
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 <= self.p_dark < 1:
            raise ValueError("p_dark must lie in [0, 1)")
        if not self.gate_rate > 0:
            raise ValueError("gate_rate must be > 0")

    @property
    def paper_regime(self) -> bool:
        """True for the sub-10% quantum efficiency of real gated APDs."""
        return self.eta <= 0.1


@dataclass(frozen=True)
class DriftState:
    phase_offset: float = 0.0
    gate_index: int = 0

    @property
    def wrapped(self) -> float:
        return self.phase_offset % (2 * math.pi)


def visibility(ch: ChannelParams) -> float:
    """Fringe contrast from extinction ratio and polarization mismatch."""
    r = ch.extinction_ratio
    return (1 - r) / (1 + r) * abs(math.cos(ch.pol_mismatch))


def mu_total(ch: ChannelParams) -> float:
    """Effective mean photon number entering the beat.

    In strong-reference mode the homodyne gain of the reference is folded in
    as sqrt(min(ref_ratio, ref_gain_cap)).
    """
    if ch.strong_reference:
        return ch.mu_key * math.sqrt(min(ch.ref_ratio, ch.ref_gain_cap))
    return ch.mu_key


def detector_means(delta_eff, ch: ChannelParams, det: DetectorParams):
    """Mean photoelectrons per gate at detectors 1 and 2.

    ``delta_eff`` may be a scalar or an array of phases in radians.
    """
    total = det.eta * mu_total(ch)
    fringe = visibility(ch) * np.cos(delta_eff)
    return total * (1 + fringe) / 2, total * (1 - fringe) / 2


def click_probability(m, p_dark: float):
    return 1 - np.exp(-np.asarray(m, dtype=float)) * (1 - p_dark)


def _outcome_codes(click1: np.ndarray, click2: np.ndarray) -> np.ndarray:
    return click1.astype(np.uint8) | (click2.astype(np.uint8) << 1)


def gate_event(
    delta_eff: float,
    ch: ChannelParams,
    det: DetectorParams,
    rng: np.random.Generator,
    gate_index: int = 0,
) -> ClickEvent:
    m1, m2 = detector_means(delta_eff, ch, det)
    u1, u2 = rng.random(2)
    code = int(u1 < click_probability(m1, det.p_dark)) | (
        int(u2 < click_probability(m2, det.p_dark)) << 1
    )
    return ClickEvent(gate_index, Outcome(code))


def step_drift(state: DriftState, ch: ChannelParams, rng: np.random.Generator) -> DriftState:
    step = ch.drift_sigma * rng.standard_normal() if ch.drift_sigma > 0 else 0.0
    return DriftState(state.phase_offset + step, state.gate_index + 1)


def apply_feedback(state: DriftState, ch: ChannelParams) -> DriftState:
    return replace(state, phase_offset=state.phase_offset * (1 - ch.feedback_gain))


def drift_path(
    state: DriftState, increments: np.ndarray, feedback_gain: float
) -> tuple[np.ndarray, DriftState]:
    """Offsets seen by each gate, and the state after the last gate.

    Equivalent to alternating ``step_drift`` and ``apply_feedback`` with the
    given increments; evaluated as a first-order linear recursion.
    """
    increments = np.asarray(increments, dtype=float)
    n = increments.size
    if n == 0:
        return np.empty(0), state
    keep = 1.0 - feedback_gain
    after, _ = lfilter([keep], [1.0, -keep], increments, zi=[keep * state.phase_offset])
    offsets = np.empty(n)
    offsets[0] = state.phase_offset
    offsets[1:] = after[:-1]
    return offsets, DriftState(float(after[-1]), state.gate_index + n)


@dataclass
class GateTrace:
    """One record per gate, stored column-wise."""

    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    delta: np.ndarray
    delta_eff: np.ndarray
    outcomes: np.ndarray
    final_drift: DriftState = field(default_factory=DriftState)

    def __len__(self) -> int:
        return int(self.outcomes.size)

    @property
    def gate_indices(self) -> np.ndarray:
        return np.arange(len(self))

    def click_events(self) -> Iterator[ClickEvent]:
        for i, code in enumerate(self.outcomes.tolist()):
            yield ClickEvent(i, Outcome(code))

    def bob_bits(self) -> np.ndarray:
        """Bob's decoded bit per gate, -1 where the gate gave none."""
        bits = np.full(len(self), -1, dtype=np.int8)
        bits[self.outcomes == Outcome.D1] = 0
        bits[self.outcomes == Outcome.D2] = 1
        return bits

    def sift_records(self) -> list[SiftRecord]:
        records = []
        for i, (a_bit, a_basis, b_basis, code) in enumerate(
            zip(
                self.alice_bits.tolist(),
                self.alice_bases.tolist(),
                self.bob_bases.tolist(),
                self.outcomes.tolist(),
            )
        ):
            records.append(
                SiftRecord(i, Basis(a_basis), Basis(b_basis), a_bit, decode_click(Outcome(code)))
            )
        return records

    def equals(self, other: "GateTrace") -> bool:
        """Bit-identical comparison of every column and the final drift state."""
        columns = ("alice_bits", "alice_bases", "bob_bases", "delta", "delta_eff", "outcomes")
        return self.final_drift == other.final_drift and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in columns
        )


def _take(stream: Optional[Iterable[int]], n: int, name: str) -> Optional[np.ndarray]:
    if stream is None:
        return None
    if isinstance(stream, np.ndarray):
        values = stream[:n]
    else:
        values = np.fromiter(itertools.islice(iter(stream), n), dtype=np.int64)
    if values.size < n:
        raise ValueError(f"{name} stream exhausted after {values.size} of {n} gates")
    values = np.asarray(values).astype(np.uint8)
    if values.max(initial=0) > 1:
        raise ValueError(f"{name} stream must contain only 0 and 1")
    return values


def simulate_session(
    n_gates: int,
    ch: ChannelParams,
    det: DetectorParams,
    rng: np.random.Generator,
    alice_bits: Optional[Iterable[int]] = None,
    alice_bases: Optional[Iterable[int]] = None,
    bob_bases: Optional[Iterable[int]] = None,
    drift: Optional[DriftState] = None,
) -> GateTrace:
    """Run ``n_gates`` gates of the link.

    Streams that are not supplied are drawn uniformly from ``rng``. Every
    other draw is taken in a fixed order whatever the parameters, so runs
    that differ only in, say, the feedback gain share their random numbers.
    """
    if n_gates <= 0:
        raise ValueError("n_gates must be positive")
    streams = [
        _take(alice_bits, n_gates, "alice_bits"),
        _take(alice_bases, n_gates, "alice_bases"),
        _take(bob_bases, n_gates, "bob_bases"),
    ]
    for k, values in enumerate(streams):
        if values is None:
            streams[k] = rng.integers(0, 2, n_gates, dtype=np.uint8)
    a_bits, a_bases, b_bases = streams

    mod_noise = rng.standard_normal(n_gates) * ch.mod_phase_sigma
    increments = rng.standard_normal(n_gates) * ch.drift_sigma
    uniforms = rng.random((2, n_gates))

    eighths = (_ALICE_EIGHTHS[a_bits, a_bases] - _BOB_EIGHTHS[b_bases]) % 8
    delta = (eighths // 2).astype(np.int8)
    offsets, final = drift_path(drift or DriftState(), increments, ch.feedback_gain)
    delta_eff = delta * (math.pi / 2) + offsets + mod_noise

    m1, m2 = detector_means(delta_eff, ch, det)
    click1 = uniforms[0] < click_probability(m1, det.p_dark)
    click2 = uniforms[1] < click_probability(m2, det.p_dark)
    return GateTrace(
        alice_bits=a_bits,
        alice_bases=a_bases,
        bob_bases=b_bases,
        delta=delta,
        delta_eff=delta_eff,
        outcomes=_outcome_codes(click1, click2),
        final_drift=final,
    )
