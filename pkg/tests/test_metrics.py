import numpy as np
import pytest
from hypothesis import given, strategies as st

from qpsk_qkd import experiment, metrics
from qpsk_qkd.config import Config
from qpsk_qkd.metrics import DetectorHistogram, RunReport
from qpsk_qkd.modem import TapStats
from qpsk_qkd.protocol import ClickEvent, Outcome, OutcomeClass, UndefinedRateError


def test_histogram_examples():
    assert metrics.histogram([]) == DetectorHistogram()
    events = [ClickEvent(i, o) for i, o in enumerate([Outcome.D1] * 3 + [Outcome.D2])]
    hist = metrics.histogram(events)
    assert (hist.d1, hist.d2, hist.none, hist.both) == (3, 1, 0, 0)
    assert hist.total == 4


@given(st.lists(st.sampled_from(list(Outcome)), max_size=200), st.randoms())
def test_histogram_sums_and_is_order_free(outcomes, rnd):
    hist = metrics.histogram(outcomes)
    assert hist.total == len(outcomes)
    shuffled = list(outcomes)
    rnd.shuffle(shuffled)
    assert metrics.histogram(shuffled) == hist


def test_false_count_rate_examples():
    hist = DetectorHistogram(d1=70, d2=30, both=5, none=100)
    assert metrics.false_count_rate(hist, OutcomeClass.DETERMINISTIC_D1) == pytest.approx(0.30)
    assert metrics.false_count_rate(hist, OutcomeClass.DETERMINISTIC_D2) == pytest.approx(0.70)
    assert metrics.false_count_rate(DetectorHistogram(d1=5), OutcomeClass.DETERMINISTIC_D1) == 0.0
    with pytest.raises(UndefinedRateError):
        metrics.false_count_rate(DetectorHistogram(none=4, both=2), OutcomeClass.DETERMINISTIC_D1)
    with pytest.raises(ValueError):
        metrics.false_count_rate(hist, OutcomeClass.RANDOM)


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_false_count_rates_complement(d1, d2):
    hist = DetectorHistogram(d1=d1, d2=d2)
    if d1 + d2 == 0:
        return
    total = metrics.false_count_rate(hist, OutcomeClass.DETERMINISTIC_D1) + metrics.false_count_rate(
        hist, OutcomeClass.DETERMINISTIC_D2
    )
    assert total == pytest.approx(1.0)


def test_deterministic_rate_on_constant_key_matches_histogram():
    config = Config(n_gates=50_000, constant_key=True, mu_key=1.0, eta=0.5, extinction_ratio=0.3)
    trace = experiment.simulate(config)
    assert metrics.deterministic_false_count_rate(trace) == metrics.false_count_rate(
        trace, OutcomeClass.DETERMINISTIC_D1
    )


def _report(**changes):
    base = dict(
        seed=3,
        n_gates=10,
        histogram=DetectorHistogram(none=5, d1=3, d2=1, both=1),
        detected_fraction=0.4,
        sifted_fraction=0.5,
        false_count_rate=0.25,
        qber=1 / 3,
        qber_sample=None,
        key_bits=2,
        paper_regime=True,
        config=(("mu_key", "0.1"), ("host", "127.0.0.1")),
    )
    base.update(changes)
    return RunReport(**base)


def test_empty_export_is_header_only():
    data = metrics.export([], "csv")
    assert data.decode() == ",".join(metrics.REPORT_COLUMNS) + "\n"
    assert metrics.parse(data, "csv") == []
    assert metrics.export([], "jsonl") == b""


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_export_round_trip(fmt):
    reports = [_report(), _report(seed=4, qber=None, sifted_fraction=None, paper_regime=False)]
    data = metrics.export(reports, fmt)
    assert metrics.parse(data, fmt) == reports
    assert metrics.export(reports, fmt) == data


def test_report_invariants():
    with pytest.raises(ValueError):
        _report(qber=1.5)
    with pytest.raises(ValueError):
        _report(n_gates=11)


def test_run_report_round_trips_and_regenerates():
    config = Config(n_gates=20_000, seed=5)
    first = experiment.run(config).report
    again = experiment.run(config).report
    assert first == again
    data = metrics.export(first)
    assert metrics.parse(data) == [first]
    assert metrics.export(again) == data


def test_tap_csv_round_trip():
    stats = TapStats(np.array([10, 10, 10]), np.array([0, 5, 9]))
    data = metrics.tap_stats_csv(stats)
    assert data.decode().splitlines()[0] == "tap_index,samples,ones,flip_score"
    parsed = metrics.parse_tap_stats_csv(data)
    assert np.array_equal(parsed.ones, stats.ones)
    assert np.allclose(parsed.flip_score, stats.flip_score)
