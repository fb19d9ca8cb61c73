"""End-to-end runs: MODEM symbols, optical gates, sifting over the wire, report."""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .config import Config, ConfigError, convert, is_numeric
from .metrics import RunReport
from .modem import (
    Burst,
    BufferRun,
    TapStats,
    TestResult,
    Xorshift64,
    analyze_taps,
    harvest_seed,
    monobit_test,
    runs_test,
    sample_words,
    select_seed_tap,
    simulate_buffer,
)
from .physics import GateTrace, simulate_session
from .protocol import UndefinedRateError, qber
from .session import (
    AliceInputs,
    BobInputs,
    SessionResult,
    memory_pair,
    run_alice,
    run_bob,
    session_id_for,
)

__all__ = [
    "ModemSeed",
    "seed_modem",
    "session_symbols",
    "simulate",
    "alice_inputs",
    "bob_inputs",
    "sift_in_process",
    "RunOutcome",
    "run",
    "sweep",
    "Calibration",
    "calibrate_rng",
    "buffer_run",
]


@dataclass(frozen=True)
class ModemSeed:
    stats: TapStats
    tap: int
    seed: int


def seed_modem(config: Config, rng: np.random.Generator) -> ModemSeed:
    """Calibrate the delay line, pick the most metastable tap, harvest a seed."""
    line = config.delay_line()
    stats = analyze_taps(sample_words(line, config.calib_words, rng))
    tap = select_seed_tap(stats)
    return ModemSeed(stats, tap, harvest_seed(line, tap, rng))


def _streams(config: Config):
    physics, alice_line, bob_line = np.random.SeedSequence(config.seed).spawn(3)
    return np.random.default_rng(physics), np.random.default_rng(alice_line), np.random.default_rng(bob_line)


def session_symbols(config: Config):
    """Alice's bits and bases and Bob's bases, or None for each stream left to the simulator."""
    n = config.n_gates
    if config.constant_key:
        zeros = np.zeros(n, dtype=np.uint8)
        return zeros, zeros, zeros
    if config.symbols == "numpy":
        return None, None, None
    _, alice_rng, bob_rng = _streams(config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        alice = Xorshift64(seed_modem(config, alice_rng).seed)
        bob = Xorshift64(seed_modem(config, bob_rng).seed)
    a_bits, a_bases = alice.symbols(n)
    _, b_bases = bob.symbols(n)
    return a_bits, a_bases, b_bases


def simulate(config: Config) -> GateTrace:
    physics_rng, _, _ = _streams(config)
    a_bits, a_bases, b_bases = session_symbols(config)
    return simulate_session(
        config.n_gates,
        config.channel(),
        config.detector(),
        physics_rng,
        alice_bits=a_bits,
        alice_bases=a_bases,
        bob_bases=b_bases,
    )


def alice_inputs(config: Config, trace: GateTrace) -> AliceInputs:
    return AliceInputs(
        session_id_for(config.seed),
        config.n_gates,
        trace.alice_bits,
        trace.alice_bases,
        config.qber_sample_fraction,
    )


def bob_inputs(config: Config, trace: GateTrace) -> BobInputs:
    return BobInputs(session_id_for(config.seed), config.n_gates, trace.bob_bases, trace.outcomes)


def sift_in_process(
    alice: AliceInputs, bob: BobInputs, timeout: float = 30.0
) -> tuple[SessionResult, SessionResult]:
    """Run both roles concurrently over an in-memory byte stream."""
    a_end, b_end = memory_pair(timeout)
    box: dict[str, object] = {}

    def bob_side() -> None:
        try:
            box["bob"] = run_bob(b_end, bob)
        except BaseException as exc:  # re-raised in the caller's thread
            box["bob_error"] = exc

    worker = threading.Thread(target=bob_side, daemon=True)
    worker.start()
    try:
        alice_result = run_alice(a_end, alice)
    finally:
        worker.join(timeout + 1)
    if "bob_error" in box:
        raise box["bob_error"]  # type: ignore[misc]
    return alice_result, box["bob"]  # type: ignore[return-value]


@dataclass
class RunOutcome:
    report: RunReport
    trace: GateTrace
    alice: SessionResult
    bob: SessionResult


def _maybe(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except UndefinedRateError:
        return None


def run(config: Config) -> RunOutcome:
    trace = simulate(config)
    alice, bob = sift_in_process(alice_inputs(config, trace), bob_inputs(config, trace), config.timeout)
    hist = metrics.histogram(trace)
    detected = alice.detections
    report = RunReport(
        seed=config.seed,
        n_gates=config.n_gates,
        histogram=hist,
        detected_fraction=detected / config.n_gates,
        sifted_fraction=len(alice.sifted) / detected if detected else None,
        false_count_rate=_maybe(metrics.deterministic_false_count_rate, trace),
        qber=_maybe(qber, alice.sifted, bob.sifted),
        qber_sample=alice.qber,
        key_bits=len(alice.key),
        paper_regime=config.detector().paper_regime,
        config=config.items(),
    )
    return RunOutcome(report, trace, alice, bob)


def sweep(config: Config, parameter: str, values: Sequence[str]):
    """Rows of (value, seed, false_count_rate, qber); row i runs with seed + i."""
    if not is_numeric(parameter):
        raise ConfigError(parameter, "is not a numeric key")
    rows = []
    for i, text in enumerate(values):
        value = convert(parameter, text) if isinstance(text, str) else text
        point = config.replace(**{parameter: value, "seed": config.seed + i})
        report = run(point).report
        rows.append((value, point.seed, report.false_count_rate, report.qber))
    return rows


@dataclass(frozen=True)
class Calibration:
    modem: ModemSeed
    monobit: TestResult
    runs: TestResult
    stuck: bool
    test_bits: int


def calibrate_rng(config: Config, test_bits: int = 1_000_000) -> Calibration:
    _, alice_rng, _ = _streams(config)
    line = config.delay_line()
    stuck = not any(line.tap_meta_prob)
    modem = seed_modem(config, alice_rng)
    bits = Xorshift64(modem.seed).bits(test_bits)
    return Calibration(modem, monobit_test(bits), runs_test(bits), stuck, test_bits)


def buffer_run(config: Config, producer_bps: Optional[float] = None) -> BufferRun:
    """Symbol buffer under periodic network bursts, rates from the config."""
    bursts = []
    if config.burst_period_ticks > 0 and config.burst_ticks > 0:
        bursts = [
            Burst(start, config.burst_ticks, config.network_bps)
            for start in range(config.burst_period_ticks, config.buffer_ticks, config.burst_period_ticks)
        ]
    return simulate_buffer(
        capacity=config.buffer_capacity,
        producer_bps=config.producer_bps if producer_bps is None else producer_bps,
        consumer_bps=config.consumer_bps,
        n_ticks=config.buffer_ticks,
        bursts=bursts,
        initial_fill=config.buffer_initial_fill,
        tick_s=1.0 / config.gate_rate,
    )
