"""Observables computed from gate traces, and their CSV / JSON-lines forms.

Report CSV columns, in order::

    seed, n_gates, none, d1, d2, both, detected_fraction, sifted_fraction,
    false_count_rate, qber, qber_sample, key_bits, paper_regime, cfg.<key>...

``cfg.<key>`` columns carry the configuration snapshot as written in a
config file. Undefined rates are empty cells in CSV and ``null`` in JSON.
The JSON-lines form has one object per report with the same field names,
the snapshot nested under ``"config"``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .modem import TapStats
from .protocol import Outcome, OutcomeClass, UndefinedRateError

__all__ = [
    "DetectorHistogram",
    "RunReport",
    "REPORT_COLUMNS",
    "histogram",
    "false_count_rate",
    "deterministic_false_count_rate",
    "export",
    "parse",
    "tap_stats_csv",
    "parse_tap_stats_csv",
    "SWEEP_COLUMNS",
    "sweep_csv",
]


@dataclass(frozen=True)
class DetectorHistogram:
    none: int = 0
    d1: int = 0
    d2: int = 0
    both: int = 0

    @property
    def total(self) -> int:
        return self.none + self.d1 + self.d2 + self.both

    @property
    def counts(self) -> dict[Outcome, int]:
        return {
            Outcome.NONE: self.none,
            Outcome.D1: self.d1,
            Outcome.D2: self.d2,
            Outcome.BOTH: self.both,
        }


def _outcome_array(trace) -> np.ndarray:
    if hasattr(trace, "outcomes"):
        return np.asarray(trace.outcomes)
    codes = [int(getattr(ev, "outcome", ev)) for ev in trace]
    return np.asarray(codes, dtype=np.uint8)


def histogram(trace) -> DetectorHistogram:
    """Counts per outcome for a GateTrace or an iterable of click events."""
    counts = np.bincount(_outcome_array(trace).astype(np.intp), minlength=4)
    return DetectorHistogram(*(int(c) for c in counts[:4]))


def false_count_rate(trace, expected: OutcomeClass) -> float:
    """Share of single clicks that landed on the detector not ``expected``.

    ``trace`` may be a trace, click events, or a ready DetectorHistogram.
    """
    hist = trace if isinstance(trace, DetectorHistogram) else histogram(trace)
    singles = hist.d1 + hist.d2
    if expected is OutcomeClass.RANDOM:
        raise ValueError("false counts need a deterministic expected outcome")
    if singles == 0:
        raise UndefinedRateError("no single clicks to count")
    wrong = hist.d2 if expected is OutcomeClass.DETERMINISTIC_D1 else hist.d1
    return wrong / singles


def deterministic_false_count_rate(trace) -> float:
    """False-count share over every gate whose ideal outcome is deterministic.

    Gates with a zero ideal phase difference expect D1, gates at pi expect
    D2; gates in the random class are ignored.
    """
    outcomes = np.asarray(trace.outcomes)
    delta = np.asarray(trace.delta)
    exp_d1 = delta == 0
    exp_d2 = delta == 2
    d1 = outcomes == Outcome.D1
    d2 = outcomes == Outcome.D2
    singles = int(np.count_nonzero((exp_d1 | exp_d2) & (d1 | d2)))
    if singles == 0:
        raise UndefinedRateError("no single clicks on deterministic gates")
    wrong = int(np.count_nonzero(exp_d1 & d2) + np.count_nonzero(exp_d2 & d1))
    return wrong / singles


@dataclass(frozen=True)
class RunReport:
    seed: int
    n_gates: int
    histogram: DetectorHistogram
    detected_fraction: float
    sifted_fraction: Optional[float]
    false_count_rate: Optional[float]
    qber: Optional[float]
    qber_sample: Optional[float]
    key_bits: int
    paper_regime: bool
    config: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("detected_fraction", "sifted_fraction", "false_count_rate", "qber", "qber_sample"):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= 1:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.histogram.total != self.n_gates:
            raise ValueError("histogram does not cover every gate")


REPORT_COLUMNS = (
    "seed",
    "n_gates",
    "none",
    "d1",
    "d2",
    "both",
    "detected_fraction",
    "sifted_fraction",
    "false_count_rate",
    "qber",
    "qber_sample",
    "key_bits",
    "paper_regime",
)
_RATES = ("detected_fraction", "sifted_fraction", "false_count_rate", "qber", "qber_sample")


def _flat(report: RunReport) -> dict:
    h = report.histogram
    return {
        "seed": report.seed,
        "n_gates": report.n_gates,
        "none": h.none,
        "d1": h.d1,
        "d2": h.d2,
        "both": h.both,
        "detected_fraction": report.detected_fraction,
        "sifted_fraction": report.sifted_fraction,
        "false_count_rate": report.false_count_rate,
        "qber": report.qber,
        "qber_sample": report.qber_sample,
        "key_bits": report.key_bits,
        "paper_regime": report.paper_regime,
    }


def _unflat(row: dict, config: tuple[tuple[str, str], ...]) -> RunReport:
    return RunReport(
        seed=int(row["seed"]),
        n_gates=int(row["n_gates"]),
        histogram=DetectorHistogram(
            int(row["none"]), int(row["d1"]), int(row["d2"]), int(row["both"])
        ),
        detected_fraction=float(row["detected_fraction"]),
        sifted_fraction=_rate(row["sifted_fraction"]),
        false_count_rate=_rate(row["false_count_rate"]),
        qber=_rate(row["qber"]),
        qber_sample=_rate(row["qber_sample"]),
        key_bits=int(row["key_bits"]),
        paper_regime=row["paper_regime"] in (True, "true"),
        config=config,
    )


def _rate(value) -> Optional[float]:
    if value is None or value == "":
        return None
    return float(value)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export(reports: Union[RunReport, Sequence[RunReport]], fmt: str = "csv") -> bytes:
    """Serialize reports; an empty sequence gives a header-only CSV."""
    if isinstance(reports, RunReport):
        reports = [reports]
    if fmt == "csv":
        cfg_keys = [k for k, _ in reports[0].config] if reports else []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(REPORT_COLUMNS) + [f"cfg.{k}" for k in cfg_keys])
        for report in reports:
            if [k for k, _ in report.config] != cfg_keys:
                raise ValueError("reports in one CSV need the same config keys")
            flat = _flat(report)
            writer.writerow(
                [_cell(flat[c]) for c in REPORT_COLUMNS] + [v for _, v in report.config]
            )
        return buf.getvalue().encode()
    if fmt == "jsonl":
        lines = []
        for report in reports:
            obj = _flat(report)
            obj["config"] = dict(report.config)
            lines.append(json.dumps(obj, separators=(",", ":")) + "\n")
        return "".join(lines).encode()
    raise ValueError(f"unknown format {fmt!r}; use csv or jsonl")


def parse(data: bytes, fmt: str = "csv") -> list[RunReport]:
    text = data.decode()
    if fmt == "csv":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            return []
        header, body = rows[0], rows[1:]
        if tuple(header[: len(REPORT_COLUMNS)]) != REPORT_COLUMNS:
            raise ValueError("not a report CSV")
        cfg_keys = [h[len("cfg."):] for h in header[len(REPORT_COLUMNS):]]
        out = []
        for row in body:
            fixed = dict(zip(REPORT_COLUMNS, row))
            config = tuple(zip(cfg_keys, row[len(REPORT_COLUMNS):]))
            out.append(_unflat(fixed, config))
        return out
    if fmt == "jsonl":
        out = []
        for line in text.splitlines():
            if line.strip():
                obj = json.loads(line)
                out.append(_unflat(obj, tuple(obj.get("config", {}).items())))
        return out
    raise ValueError(f"unknown format {fmt!r}; use csv or jsonl")


TAP_COLUMNS = ("tap_index", "samples", "ones", "flip_score")


def tap_stats_csv(stats: TapStats) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TAP_COLUMNS)
    for i, samples, ones, score in stats.rows():
        writer.writerow([i, samples, ones, repr(score)])
    return buf.getvalue().encode()


def parse_tap_stats_csv(data: bytes) -> TapStats:
    rows = list(csv.reader(io.StringIO(data.decode())))
    if not rows or tuple(rows[0]) != TAP_COLUMNS:
        raise ValueError("not a tap statistics CSV")
    samples = np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
    ones = np.array([int(r[2]) for r in rows[1:]], dtype=np.int64)
    return TapStats(samples, ones)


SWEEP_COLUMNS = ("parameter", "value", "seed", "false_count_rate", "qber")


def sweep_csv(parameter: str, rows: Iterable[tuple[float, int, Optional[float], Optional[float]]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for value, seed, fcr, q in rows:
        writer.writerow([parameter, _cell(value), seed, _cell(fcr), _cell(q)])
    return buf.getvalue().encode()
