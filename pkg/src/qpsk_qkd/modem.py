"""Software stand-in for the FPGA MODEM.

A tapped delay line is sampled by one flip-flop per segment. Real
metastability is modeled per tap as a Bernoulli choice between a fair coin
and a fixed resolved level. The most metastable tap seeds an xorshift64
generator, whose low two output bits drive one (bit, basis) symbol. A ring
buffer between the generator and the optics absorbs the rate mismatch
between the electronics, optical and network layers.
"""

from __future__ import annotations

import math
import threading
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .protocol import Basis

__all__ = [
    "DelayLine",
    "TapStats",
    "triangular_profile",
    "sample_word",
    "sample_words",
    "expected_flip_scores",
    "analyze_taps",
    "select_seed_tap",
    "harvest_seed",
    "ZERO_SEED_SUBSTITUTE",
    "MASK64",
    "prng_next",
    "next_symbol",
    "Xorshift64",
    "BufferUnderrun",
    "BufferOverflow",
    "SymbolBuffer",
    "Burst",
    "BufferRun",
    "simulate_buffer",
    "TestResult",
    "monobit_test",
    "runs_test",
    "bits_of",
]

MASK64 = (1 << 64) - 1
ZERO_SEED_SUBSTITUTE = 0x9E3779B97F4A7C15
_ALPHA = 0.01


def triangular_profile(n_taps: int, peak: float, half_width: float) -> tuple[float, ...]:
    """Metastability probabilities falling linearly from 1 at ``peak``.

    ``peak`` may be fractional; a peak halfway between two taps gives both
    the same probability.
    """
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    return tuple(max(0.0, 1.0 - abs(i - peak) / half_width) for i in range(n_taps))


@dataclass(frozen=True)
class DelayLine:
    n_taps: int = 32
    segment_delay_ps: float = 25.0
    tap_meta_prob: Optional[tuple[float, ...]] = None
    resolved_bits: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.n_taps < 2:
            raise ValueError("n_taps must be >= 2")
        if self.tap_meta_prob is None:
            profile = triangular_profile(self.n_taps, self.n_taps // 2, max(1, self.n_taps // 4))
            object.__setattr__(self, "tap_meta_prob", profile)
        if self.resolved_bits is None:
            # taps that the edge has already passed resolve to 1, the rest to 0
            levels = tuple(int(i < self.n_taps // 2) for i in range(self.n_taps))
            object.__setattr__(self, "resolved_bits", levels)
        if len(self.tap_meta_prob) != self.n_taps:
            raise ValueError("tap_meta_prob needs exactly one probability per tap")
        if len(self.resolved_bits) != self.n_taps:
            raise ValueError("resolved_bits needs exactly one level per tap")
        if any(not 0 <= p <= 1 for p in self.tap_meta_prob):
            raise ValueError("tap_meta_prob entries must lie in [0, 1]")
        if any(b not in (0, 1) for b in self.resolved_bits):
            raise ValueError("resolved_bits entries must be 0 or 1")

    @property
    def span_ps(self) -> float:
        return self.n_taps * self.segment_delay_ps


def sample_words(line: DelayLine, n_words: int, rng: np.random.Generator) -> np.ndarray:
    """``n_words`` captures of the line as an (n_words, n_taps) uint8 array."""
    p = np.asarray(line.tap_meta_prob)
    unresolved = rng.random((n_words, line.n_taps)) < p
    coin = rng.integers(0, 2, (n_words, line.n_taps), dtype=np.uint8)
    return np.where(unresolved, coin, np.asarray(line.resolved_bits, dtype=np.uint8))


def sample_word(line: DelayLine, rng: np.random.Generator) -> np.ndarray:
    return sample_words(line, 1, rng)[0]


@dataclass(frozen=True)
class TapStats:
    samples: np.ndarray
    ones: np.ndarray

    @property
    def flip_score(self) -> np.ndarray:
        f = self.ones / self.samples
        return 2 * np.minimum(f, 1 - f)

    def __len__(self) -> int:
        return int(self.ones.size)

    def rows(self) -> Iterator[tuple[int, int, int, float]]:
        for i, (s, o, score) in enumerate(
            zip(self.samples.tolist(), self.ones.tolist(), self.flip_score.tolist())
        ):
            yield i, s, o, score


def expected_flip_scores(line: DelayLine) -> np.ndarray:
    p = np.asarray(line.tap_meta_prob)
    f = p / 2 + (1 - p) * np.asarray(line.resolved_bits)
    return 2 * np.minimum(f, 1 - f)


def analyze_taps(words) -> TapStats:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint8))
    if words.size == 0:
        raise ValueError("analyze_taps needs at least one word")
    n = words.shape[0]
    return TapStats(np.full(words.shape[1], n, dtype=np.int64), words.sum(axis=0, dtype=np.int64))


def select_seed_tap(stats) -> int:
    """Index of the most metastable tap, lowest index on ties.

    Accepts a :class:`TapStats` or a plain sequence of scores.
    """
    scores = stats.flip_score if isinstance(stats, TapStats) else np.asarray(stats, dtype=float)
    if scores.size == 0:
        raise ValueError("no taps to choose from")
    return int(np.argmax(scores))


def harvest_seed(
    line: DelayLine, tap_index: int, rng: np.random.Generator, n_bits: int = 64
) -> int:
    """Concatenate ``n_bits`` samples of one tap, first sample most significant.

    An all-zero harvest is replaced by ``ZERO_SEED_SUBSTITUTE`` since xorshift
    cannot leave the zero state.
    """
    if line.tap_meta_prob[tap_index] == 0:
        warnings.warn(f"tap {tap_index} never goes metastable; the seed is constant", stacklevel=2)
    column = sample_words(line, n_bits, rng)[:, tap_index]
    seed = 0
    for bit in column.tolist():
        seed = (seed << 1) | bit
    seed &= MASK64
    if seed == 0:
        warnings.warn(f"all-zero harvest replaced by 0x{ZERO_SEED_SUBSTITUTE:016x}", stacklevel=2)
        return ZERO_SEED_SUBSTITUTE
    return seed


def prng_next(state: int) -> tuple[int, int]:
    """One xorshift64 (13, 7, 17) step. The new state is also the output."""
    if state == 0:
        raise ValueError("xorshift64 state must be nonzero")
    x = state & MASK64
    x ^= (x << 13) & MASK64
    x ^= x >> 7
    x ^= (x << 17) & MASK64
    return x, x


def next_symbol(state: int) -> tuple[int, tuple[int, Basis]]:
    """Draw one (bit, basis): bit from the output LSB, basis from the next bit."""
    state, value = prng_next(state)
    return state, (value & 1, Basis((value >> 1) & 1))


class Xorshift64:
    def __init__(self, seed: int):
        if seed & MASK64 == 0:
            raise ValueError("xorshift64 seed must be nonzero")
        self.state = seed & MASK64

    def next(self) -> int:
        self.state, value = prng_next(self.state)
        return value

    def symbol(self) -> tuple[int, Basis]:
        self.state, sym = next_symbol(self.state)
        return sym

    def symbols(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` symbols as (bits, bases) uint8 arrays."""
        values = np.empty(n, dtype=np.uint64)
        x = self.state
        for i in range(n):
            x ^= (x << 13) & MASK64
            x ^= x >> 7
            x ^= (x << 17) & MASK64
            values[i] = x
        self.state = x
        low = (values & np.uint64(3)).astype(np.uint8)
        return low & 1, low >> 1

    def bits(self, n: int) -> np.ndarray:
        """``n`` bits, each 64-bit output read LSB first."""
        words = -(-n // 64)
        out = np.empty(words, dtype=np.uint64)
        for i in range(words):
            out[i] = self.next()
        return bits_of(out)[:n]


def bits_of(values: np.ndarray) -> np.ndarray:
    """Unpack uint64 values into bits, LSB first within each value."""
    as_bytes = np.asarray(values, dtype="<u8").view(np.uint8)
    return np.unpackbits(as_bytes, bitorder="little")


class BufferUnderrun(Exception):
    """Pop from an empty symbol buffer."""


class BufferOverflow(Exception):
    """Push into a full symbol buffer."""


class SymbolBuffer:
    """Bounded FIFO of (bit, basis) symbols for one producer and one consumer."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque()
        self._lock = threading.Lock()
        self.underruns = 0
        self.overflows = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def push(self, symbol) -> None:
        with self._lock:
            if len(self._items) >= self.capacity:
                self.overflows += 1
                raise BufferOverflow("symbol buffer full")
            self._items.append(symbol)

    def pop(self):
        with self._lock:
            if not self._items:
                self.underruns += 1
                raise BufferUnderrun("symbol buffer empty")
            return self._items.popleft()

    def push_many(self, symbols: Sequence) -> int:
        """Push as many as fit; returns how many were accepted."""
        with self._lock:
            room = self.capacity - len(self._items)
            accepted = min(room, len(symbols))
            self._items.extend(symbols[:accepted])
            self.overflows += len(symbols) - accepted
            return accepted

    def pop_many(self, n: int) -> list:
        """Pop up to ``n``; every missing symbol counts as an underrun."""
        with self._lock:
            got = min(n, len(self._items))
            out = [self._items.popleft() for _ in range(got)]
            self.underruns += n - got
            return out


@dataclass(frozen=True)
class Burst:
    """A network read of ``rate_bps`` lasting ``n_ticks`` from ``start_tick``."""

    start_tick: int
    n_ticks: int
    rate_bps: float = 100e6


@dataclass
class BufferRun:
    occupancy: np.ndarray
    underruns: int
    overflows: int
    produced: int
    consumed: int


def simulate_buffer(
    capacity: int,
    producer_bps: float,
    consumer_bps: float,
    n_ticks: int,
    bursts: Sequence[Burst] = (),
    initial_fill: int = 0,
    tick_s: float = 1e-6,
) -> BufferRun:
    """Tick-level producer/consumer run; two bits per symbol.

    Each tick the producer pushes first, then the optics and any active
    network bursts pop. Fractional rates accumulate as credit. A full buffer
    stalls the producer (counted as overflow); a short buffer is an underrun.
    """
    if producer_bps < 0 or consumer_bps < 0:
        raise ValueError("rates must be non-negative")
    if not 0 <= initial_fill <= capacity:
        raise ValueError("initial_fill must lie in [0, capacity]")
    demand_bps = np.full(n_ticks, consumer_bps, dtype=float)
    for b in bursts:
        lo = max(0, b.start_tick)
        demand_bps[lo : max(lo, b.start_tick + b.n_ticks)] += b.rate_bps
    # cumulative symbol counts; floor keeps them integral and never ahead of the rate
    supply = np.diff(np.floor(np.arange(n_ticks + 1) * producer_bps * tick_s / 2 + 1e-9))
    demand = np.diff(np.floor(np.concatenate(([0.0], np.cumsum(demand_bps * tick_s / 2))) + 1e-9))

    level = initial_fill
    occupancy = np.empty(n_ticks, dtype=np.int64)
    underruns = overflows = produced = consumed = 0
    for t, (s, d) in enumerate(zip(supply.astype(np.int64).tolist(), demand.astype(np.int64).tolist())):
        pushed = min(s, capacity - level)
        overflows += s - pushed
        level += pushed
        produced += pushed
        popped = min(d, level)
        underruns += d - popped
        level -= popped
        consumed += popped
        occupancy[t] = level
    return BufferRun(occupancy, underruns, overflows, produced, consumed)


@dataclass(frozen=True)
class TestResult:
    passed: bool
    statistic: float
    p_value: float

    __test__ = False


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.int64).ravel()
    if arr.size < 100:
        raise ValueError("at least 100 bits are required")
    return arr


def monobit_test(bits) -> TestResult:
    """Frequency test at significance 0.01; statistic is the z-score."""
    arr = _as_bits(bits)
    n = arr.size
    z = (2 * int(arr.sum()) - n) / math.sqrt(n)
    p = math.erfc(abs(z) / math.sqrt(2))
    return TestResult(p >= _ALPHA, z, p)


def runs_test(bits) -> TestResult:
    """Runs test at significance 0.01; statistic is the number of runs.

    Fails outright when the ones fraction is too far from 1/2 for the runs
    statistic to be meaningful.
    """
    arr = _as_bits(bits)
    n = arr.size
    pi = arr.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestResult(False, float("nan"), 0.0)
    runs = 1 + int(np.count_nonzero(arr[1:] != arr[:-1]))
    p = math.erfc(abs(runs - 2 * n * pi * (1 - pi)) / (2 * math.sqrt(2 * n) * pi * (1 - pi)))
    return TestResult(p >= _ALPHA, float(runs), p)
