"""Sifting session over the classical channel.

Bob opens with HELLO, then discloses which gates gave him a usable click
(DETECTIONS) and the bases he measured them in (BOB_BASES). Alice answers
with the basis match mask and, when QBER sampling is enabled, a request for
a deterministic sample of the sifted bits. Bob returns those bits, Alice
reports the error count, and Alice closes with BYE. Sampled bits are
dropped from both final keys.

The role state machines are sans-IO: they take decoded messages and return
the messages to send. ``run_alice`` / ``run_bob`` drive them over any
reliable ordered byte stream.
"""

from __future__ import annotations

import enum
import hashlib
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .protocol import Outcome, SiftedKey, decode_click
from .wire import (
    BobBases,
    Bye,
    ByeReason,
    Detections,
    FrameError,
    FrameReader,
    Hello,
    IncompleteFrame,
    MatchMask,
    Message,
    QberReport,
    QberSampleBits,
    QberSampleReq,
    encode_frame,
)

__all__ = [
    "DEFAULT_TIMEOUT",
    "SessionPhase",
    "Role",
    "SessionError",
    "ProtocolViolation",
    "PeerAborted",
    "TransportClosed",
    "TransportTimeout",
    "AliceInputs",
    "BobInputs",
    "SessionResult",
    "AliceMachine",
    "BobMachine",
    "sample_gates",
    "session_id_for",
    "MemoryTransport",
    "memory_pair",
    "SocketTransport",
    "MessageChannel",
    "run_alice",
    "run_bob",
    "listen_once",
    "dial",
    "key_digest",
]

DEFAULT_TIMEOUT = 30.0


class SessionPhase(enum.Enum):
    INIT = "init"
    AWAIT_DETECTIONS = "await_detections"
    AWAIT_BASES = "await_bases"
    AWAIT_MASK = "await_mask"
    AWAIT_QBER = "await_qber"
    DONE = "done"
    FAILED = "failed"


class Role(enum.Enum):
    ALICE = "alice"
    BOB = "bob"


class SessionError(Exception):
    pass


class ProtocolViolation(SessionError):
    def __init__(self, reason: ByeReason, detail: str):
        super().__init__(f"{reason.name.lower()}: {detail}")
        self.reason = reason


class PeerAborted(SessionError):
    def __init__(self, reason: int):
        super().__init__(f"peer closed the session with reason {reason}")
        self.reason = reason


class TransportClosed(SessionError):
    pass


class TransportTimeout(SessionError, TimeoutError):
    pass


@dataclass(frozen=True)
class AliceInputs:
    session_id: bytes
    n_gates: int
    bits: Sequence[int]
    bases: Sequence[int]
    sample_fraction: float = 0.1


@dataclass(frozen=True)
class BobInputs:
    session_id: bytes
    n_gates: int
    bases: Sequence[int]
    outcomes: Sequence[int]


@dataclass(frozen=True)
class SessionResult:
    role: Role
    sifted: SiftedKey
    key: SiftedKey
    sample_gates: tuple[int, ...]
    report: Optional[QberReport]
    detections: int

    @property
    def qber(self) -> Optional[float]:
        """Sampled error fraction; None if sampling was off or the sample empty."""
        return None if self.report is None else self.report.rate


def session_id_for(*parts: object) -> bytes:
    text = "|".join(str(p) for p in parts)
    return hashlib.sha256(text.encode()).digest()[:16]


def sample_gates(session_id: bytes, sifted_gates: Sequence[int], fraction: float) -> tuple[int, ...]:
    """Deterministic QBER sample of ``round(fraction * n)`` sifted gates."""
    n = len(sifted_gates)
    k = int(round(fraction * n))
    if k == 0:
        return ()
    rng = np.random.default_rng(int.from_bytes(session_id, "big"))
    chosen = rng.choice(n, size=k, replace=False)
    gates = np.asarray(sifted_gates)[np.sort(chosen)]
    return tuple(int(g) for g in gates)


def key_digest(key: SiftedKey) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(key.source_gates, dtype=">u8").tobytes())
    h.update(bytes(key.bits))
    return h.hexdigest()


class _Machine:
    role: Role

    def __init__(self) -> None:
        self.phase = SessionPhase.INIT
        self.result: Optional[SessionResult] = None

    def _fail(self, reason: ByeReason, detail: str) -> ProtocolViolation:
        self.phase = SessionPhase.FAILED
        return ProtocolViolation(reason, detail)

    def _unexpected(self, msg: Message) -> ProtocolViolation:
        return self._fail(
            ByeReason.UNEXPECTED_MESSAGE,
            f"{type(msg).__name__} not allowed in phase {self.phase.value}",
        )

    def _peer_bye(self, msg: Bye) -> PeerAborted:
        self.phase = SessionPhase.FAILED
        return PeerAborted(msg.reason)

    @property
    def finished(self) -> bool:
        return self.phase in (SessionPhase.DONE, SessionPhase.FAILED)


class AliceMachine(_Machine):
    role = Role.ALICE

    def __init__(self, inputs: AliceInputs):
        super().__init__()
        if len(inputs.bits) < inputs.n_gates or len(inputs.bases) < inputs.n_gates:
            raise ValueError("Alice needs a bit and a basis for every gate")
        self.inputs = inputs
        self._detected: tuple[int, ...] = ()
        self._sifted = SiftedKey.empty()
        self._sample: tuple[int, ...] = ()

    def receive(self, msg: Message) -> list[Message]:
        if self.finished:
            raise self._unexpected(msg)
        if isinstance(msg, Bye):
            raise self._peer_bye(msg)
        phase = self.phase
        if phase is SessionPhase.INIT and isinstance(msg, Hello):
            if msg.n_gates != self.inputs.n_gates:
                raise self._fail(
                    ByeReason.HELLO_MISMATCH,
                    f"peer has {msg.n_gates} gates, expected {self.inputs.n_gates}",
                )
            if msg.session_id != self.inputs.session_id:
                raise self._fail(ByeReason.HELLO_MISMATCH, "session id differs")
            self.phase = SessionPhase.AWAIT_DETECTIONS
            return []
        if phase is SessionPhase.AWAIT_DETECTIONS and isinstance(msg, Detections):
            if msg.gates and msg.gates[-1] >= self.inputs.n_gates:
                raise self._fail(ByeReason.INCONSISTENT, "detected gate out of range")
            self._detected = msg.gates
            self.phase = SessionPhase.AWAIT_BASES
            return []
        if phase is SessionPhase.AWAIT_BASES and isinstance(msg, BobBases):
            return self._on_bases(msg)
        if phase is SessionPhase.AWAIT_QBER and isinstance(msg, QberSampleBits):
            return self._on_sample_bits(msg)
        raise self._unexpected(msg)

    def _on_bases(self, msg: BobBases) -> list[Message]:
        if len(msg.bases) != len(self._detected):
            raise self._fail(
                ByeReason.INCONSISTENT,
                f"{len(msg.bases)} bases for {len(self._detected)} detections",
            )
        bits, bases = self.inputs.bits, self.inputs.bases
        mask = tuple(int(bases[g] == b) for g, b in zip(self._detected, msg.bases))
        gates = tuple(g for g, m in zip(self._detected, mask) if m)
        self._sifted = SiftedKey(tuple(int(bits[g]) for g in gates), gates)
        reply: list[Message] = [MatchMask(mask)]
        if self.inputs.sample_fraction > 0:
            self._sample = sample_gates(self.inputs.session_id, gates, self.inputs.sample_fraction)
            self.phase = SessionPhase.AWAIT_QBER
            reply.append(QberSampleReq(self._sample))
            return reply
        self._finish(None)
        reply.append(Bye(ByeReason.NORMAL))
        return reply

    def _on_sample_bits(self, msg: QberSampleBits) -> list[Message]:
        if len(msg.bits) != len(self._sample):
            raise self._fail(
                ByeReason.INCONSISTENT,
                f"{len(msg.bits)} sample bits for {len(self._sample)} requested gates",
            )
        position = {g: i for i, g in enumerate(self._sifted.source_gates)}
        mine = [self._sifted.bits[position[g]] for g in self._sample]
        errors = sum(a != b for a, b in zip(mine, msg.bits))
        report = QberReport(errors, len(self._sample))
        self._finish(report)
        return [report, Bye(ByeReason.NORMAL)]

    def _finish(self, report: Optional[QberReport]) -> None:
        self.phase = SessionPhase.DONE
        self.result = SessionResult(
            Role.ALICE,
            self._sifted,
            self._sifted.without(self._sample),
            self._sample,
            report,
            len(self._detected),
        )


class BobMachine(_Machine):
    role = Role.BOB

    def __init__(self, inputs: BobInputs):
        super().__init__()
        if len(inputs.bases) < inputs.n_gates or len(inputs.outcomes) < inputs.n_gates:
            raise ValueError("Bob needs a basis and an outcome for every gate")
        self.inputs = inputs
        bits = [decode_click(Outcome(int(o))) for o in inputs.outcomes[: inputs.n_gates]]
        self._detected = tuple(g for g, b in enumerate(bits) if b is not None)
        self._bits = bits
        self._sifted = SiftedKey.empty()
        self._sample: tuple[int, ...] = ()
        self._report: Optional[QberReport] = None
        self._expect: tuple[type, ...] = ()

    def start(self) -> list[Message]:
        if self.phase is not SessionPhase.INIT:
            raise RuntimeError("session already started")
        self.phase = SessionPhase.AWAIT_MASK
        bases = tuple(int(self.inputs.bases[g]) for g in self._detected)
        return [
            Hello(self.inputs.session_id, self.inputs.n_gates),
            Detections(self._detected),
            BobBases(bases),
        ]

    def receive(self, msg: Message) -> list[Message]:
        if self.finished or self.phase is SessionPhase.INIT:
            raise self._unexpected(msg)
        if self.phase is SessionPhase.AWAIT_MASK:
            if isinstance(msg, Bye):
                raise self._peer_bye(msg)
            if not isinstance(msg, MatchMask):
                raise self._unexpected(msg)
            if len(msg.mask) != len(self._detected):
                raise self._fail(
                    ByeReason.INCONSISTENT,
                    f"mask of {len(msg.mask)} for {len(self._detected)} detections",
                )
            gates = tuple(g for g, m in zip(self._detected, msg.mask) if m)
            self._sifted = SiftedKey(tuple(self._bits[g] for g in gates), gates)
            self.phase = SessionPhase.AWAIT_QBER
            self._expect = (QberSampleReq, Bye)
            return []
        # AWAIT_QBER
        if not isinstance(msg, self._expect):
            if isinstance(msg, Bye):
                raise self._peer_bye(msg)
            raise self._unexpected(msg)
        if isinstance(msg, QberSampleReq):
            sifted = set(self._sifted.source_gates)
            if not sifted.issuperset(msg.gates):
                raise self._fail(ByeReason.INCONSISTENT, "sample gate outside the sifted key")
            self._sample = msg.gates
            self._expect = (QberReport,)
            return [QberSampleBits(tuple(self._bits[g] for g in msg.gates))]
        if isinstance(msg, QberReport):
            if msg.denominator != len(self._sample):
                raise self._fail(ByeReason.INCONSISTENT, "report does not match the sample")
            self._report = msg
            self._expect = (Bye,)
            return []
        if msg.reason != ByeReason.NORMAL:
            raise self._peer_bye(msg)
        self.phase = SessionPhase.DONE
        self.result = SessionResult(
            Role.BOB,
            self._sifted,
            self._sifted.without(self._sample),
            self._sample,
            self._report,
            len(self._detected),
        )
        return []


class _ByteQueue:
    def __init__(self) -> None:
        self.buf = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class MemoryTransport:
    """One end of an in-process byte stream pair."""

    def __init__(self, tx: _ByteQueue, rx: _ByteQueue, timeout: float = DEFAULT_TIMEOUT):
        self._tx = tx
        self._rx = rx
        self.timeout = timeout

    def send(self, data: bytes) -> None:
        with self._tx.cond:
            if self._tx.closed:
                raise TransportClosed("send on closed stream")
            self._tx.buf.extend(data)
            self._tx.cond.notify_all()

    def recv(self, n: int) -> bytes:
        deadline = time.monotonic() + self.timeout
        with self._rx.cond:
            while not self._rx.buf and not self._rx.closed:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportTimeout(f"no data within {self.timeout} s")
                self._rx.cond.wait(remaining)
            chunk = bytes(self._rx.buf[:n])
            del self._rx.buf[:n]
            return chunk

    def close(self) -> None:
        with self._tx.cond:
            self._tx.closed = True
            self._tx.cond.notify_all()


def memory_pair(timeout: float = DEFAULT_TIMEOUT) -> tuple[MemoryTransport, MemoryTransport]:
    a_to_b, b_to_a = _ByteQueue(), _ByteQueue()
    return MemoryTransport(a_to_b, b_to_a, timeout), MemoryTransport(b_to_a, a_to_b, timeout)


class SocketTransport:
    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        self.sock = sock
        self.timeout = timeout
        sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except socket.timeout as exc:
            raise TransportTimeout(f"send stalled for {self.timeout} s") from exc
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc

    def recv(self, n: int) -> bytes:
        try:
            return self.sock.recv(n)
        except socket.timeout as exc:
            raise TransportTimeout(f"no data within {self.timeout} s") from exc
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc

    def close(self) -> None:
        self.sock.close()


def listen_once(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> SocketTransport:
    """Accept a single connection on ``host:port``."""
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        try:
            conn, _ = server.accept()
        except socket.timeout as exc:
            raise TransportTimeout(f"no peer connected within {timeout} s") from exc
    return SocketTransport(conn, timeout)


def dial(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> SocketTransport:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return SocketTransport(sock, timeout)
        except ConnectionRefusedError:
            # the serving side may still be simulating its gates
            if time.monotonic() >= deadline:
                raise TransportTimeout(f"could not reach {host}:{port} within {timeout} s")
            time.sleep(0.05)
        except socket.timeout as exc:
            raise TransportTimeout(f"could not reach {host}:{port} within {timeout} s") from exc


class MessageChannel:
    def __init__(self, transport) -> None:
        self.transport = transport
        self._reader = FrameReader()

    def send(self, msg: Message) -> None:
        self.transport.send(encode_frame(msg))

    def recv(self) -> Message:
        while True:
            try:
                return self._reader.next_message()
            except IncompleteFrame:
                pass
            chunk = self.transport.recv(max(4096, self._reader.needed()))
            if not chunk:
                raise TransportClosed("peer closed the connection")
            self._reader.feed(chunk)


def _drive(machine: _Machine, channel: MessageChannel, opening: list[Message]) -> SessionResult:
    try:
        for msg in opening:
            channel.send(msg)
        while not machine.finished:
            try:
                incoming = channel.recv()
            except FrameError as exc:
                machine.phase = SessionPhase.FAILED
                raise ProtocolViolation(ByeReason.MALFORMED, str(exc)) from exc
            for msg in machine.receive(incoming):
                channel.send(msg)
    except ProtocolViolation as exc:
        try:
            channel.send(Bye(exc.reason))
        except SessionError:
            pass
        raise
    assert machine.result is not None
    return machine.result


def run_alice(transport, inputs: AliceInputs) -> SessionResult:
    return _drive(AliceMachine(inputs), MessageChannel(transport), [])


def run_bob(transport, inputs: BobInputs) -> SessionResult:
    machine = BobMachine(inputs)
    return _drive(machine, MessageChannel(transport), machine.start())
