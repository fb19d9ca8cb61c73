"""Command line entry point: ``qpsk-qkd <command> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
a sifting session fails (protocol violation, lost peer or timeout).
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiment, metrics
from .config import Config, ConfigError, load
from .session import (
    SessionError,
    key_digest,
    dial,
    listen_once,
    run_alice,
    run_bob,
)

EXIT_OK, EXIT_CONFIG, EXIT_SESSION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--preset", metavar="NAME", help="built-in preset (ideal, paper30)")
    p.add_argument("--gates", type=int, metavar="N", help="number of gates")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--constant-key", action="store_true", help="send bit 0 in B1 with Bob in B1")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key"
    )
    p.add_argument("--out", metavar="PATH", help="write the main output here instead of stdout")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--figure", metavar="PATH", help="also render a figure to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpsk-qkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one session and report")
    _common(p)

    p = sub.add_parser("sweep", help="report false-count rate and QBER across one parameter")
    _common(p)
    p.add_argument("--param", required=True, help="numeric config key to vary")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--values", help="comma separated values")
    group.add_argument("--range", dest="span", metavar="START:STOP:NUM", help="evenly spaced values")

    p = sub.add_parser("calibrate-rng", help="analyze the delay line and test the seeded generator")
    _common(p)
    p.add_argument("--test-bits", type=int, default=1_000_000)

    p = sub.add_parser("buffer", help="run the symbol buffer against the layer rates")
    _common(p)

    p = sub.add_parser("serve", help="Alice: listen for Bob and sift over TCP")
    _common(p)
    p.add_argument("--listen", type=_hostport, metavar="HOST:PORT")

    p = sub.add_parser("connect", help="Bob: connect to Alice and sift over TCP")
    _common(p)
    p.add_argument("--connect", type=_hostport, metavar="HOST:PORT")
    return parser


def _config(args) -> Config:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(None, f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.gates is not None:
        overrides["n_gates"] = str(args.gates)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.constant_key:
        overrides["constant_key"] = "true"
    return load(args.config, args.preset, overrides)


def _emit(args, data: bytes) -> None:
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _cmd_run(args, config: Config) -> int:
    outcome = experiment.run(config)
    _emit(args, metrics.export([outcome.report], args.format))
    if args.figure:
        from .plotting import plot_histogram

        plot_histogram(outcome.report.histogram, args.figure)
    return EXIT_OK


def _values(args) -> list[str]:
    if args.values is not None:
        return [v.strip() for v in args.values.split(",") if v.strip()]
    try:
        start, stop, num = args.span.split(":")
        points = np.linspace(float(start), float(stop), int(num))
    except ValueError:
        raise ConfigError(None, f"--range expects START:STOP:NUM, got {args.span!r}") from None
    return [repr(float(v)) for v in points]


def _cmd_sweep(args, config: Config) -> int:
    rows = experiment.sweep(config, args.param, _values(args))
    _emit(args, metrics.sweep_csv(args.param, rows))
    if args.figure:
        from .plotting import plot_sweep

        plot_sweep(args.param, rows, args.figure)
    return EXIT_OK


def _cmd_calibrate(args, config: Config) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cal = experiment.calibrate_rng(config, args.test_bits)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if cal.stuck:
        print("warning: no tap is metastable; the seed carries no entropy", file=sys.stderr)
    _emit(args, metrics.tap_stats_csv(cal.modem.stats))
    print(f"chosen_tap {cal.modem.tap}", file=sys.stderr)
    print(f"seed 0x{cal.modem.seed:016x}", file=sys.stderr)
    for name, result in (("monobit", cal.monobit), ("runs", cal.runs)):
        verdict = "pass" if result.passed else "fail"
        print(f"{name} {verdict} statistic={result.statistic:.4f} p={result.p_value:.4f} "
              f"bits={cal.test_bits}", file=sys.stderr)
    if args.figure:
        from .plotting import plot_tap_profile

        plot_tap_profile(cal.modem.stats, args.figure, cal.modem.tap)
    return EXIT_OK


def _cmd_buffer(args, config: Config) -> int:
    result = experiment.buffer_run(config)
    text = (
        "producer_bps,consumer_bps,network_bps,capacity,ticks,underruns,overflows,produced,consumed\n"
        f"{config.producer_bps!r},{config.consumer_bps!r},{config.network_bps!r},"
        f"{config.buffer_capacity},{config.buffer_ticks},{result.underruns},{result.overflows},"
        f"{result.produced},{result.consumed}\n"
    )
    _emit(args, text.encode())
    if args.figure:
        from .plotting import plot_buffer

        plot_buffer(result.occupancy, config.buffer_capacity, args.figure)
    return EXIT_OK


def _print_session(role: str, result) -> None:
    qber = "undefined" if result.qber is None else f"{result.qber:.6f}"
    print(
        f"{role} key_digest {key_digest(result.key)} bits {len(result.key)} qber {qber}",
        flush=True,
    )


def _cmd_serve(args, config: Config) -> int:
    host, port = args.listen or (config.host, config.port)
    trace = experiment.simulate(config)
    transport = listen_once(host, port, config.timeout)
    try:
        result = run_alice(transport, experiment.alice_inputs(config, trace))
    finally:
        transport.close()
    _print_session("alice", result)
    return EXIT_OK


def _cmd_connect(args, config: Config) -> int:
    host, port = args.connect or (config.host, config.port)
    trace = experiment.simulate(config)
    transport = dial(host, port, config.timeout)
    try:
        result = run_bob(transport, experiment.bob_inputs(config, trace))
    finally:
        transport.close()
    _print_session("bob", result)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "calibrate-rng": _cmd_calibrate,
    "buffer": _cmd_buffer,
    "serve": _cmd_serve,
    "connect": _cmd_connect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SessionError as exc:
        print(f"session failed: {exc}", file=sys.stderr)
        return EXIT_SESSION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
