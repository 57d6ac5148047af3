"""Remote (device-in-the-loop) optimization over a framed byte stream.

Frame layout, all ASCII::

    $KIND,SEQ,LEN:PAYLOAD*CCCC\\n

``PAYLOAD`` is ``LEN`` bytes of comma-separated numbers in Python ``repr``
form (shortest text that round-trips the double exactly). ``CCCC`` is the
CRC-16/CCITT (init 0xFFFF) of everything between ``$`` and ``*``, as four
uppercase hex digits.

Session: the optimizer sends ``HELLO``; the device answers ``HELLO`` with
``(version, kind, size, lower..., upper..., current...)`` describing its
candidate space. Each ``CANDIDATE_KB``/``CANDIDATE_SCALE`` with sequence
number ``n`` is answered by exactly one ``RESULT`` with the same ``n``
(stop-and-wait). A corrupted frame is answered with ``NAK`` and the peer
resends its last frame, at most three times. ``ABORT`` closes the session
from either side.
"""

from __future__ import annotations

import binascii
import math
import socket
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ga import GAConfig, GAResult, run_ga
from .sco import PlantTask

PROTOCOL_VERSION = 1
KINDS = ("HELLO", "CANDIDATE_KB", "CANDIDATE_SCALE", "RESULT", "ABORT", "NAK")
CANDIDATE_FRAME = {"kb": "CANDIDATE_KB", "scale": "CANDIDATE_SCALE"}
KIND_CODES = {"kb": 0, "scale": 1}
BITS_PER_BYTE = 10
MAX_RESENDS = 3
_MAX_HEADER = 48


class FrameError(ValueError):
    pass


class NeedMoreBytes(Exception):
    pass


class LinkError(RuntimeError):
    pass


class RemoteOptimizationError(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


# ------------------------------------------------------------------ framing

@dataclass(frozen=True)
class Message:
    kind: str
    seq: int
    payload: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.seq < 0:
            raise ValueError("sequence numbers are non-negative")
        vals = tuple(float(v) for v in self.payload)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("payload numbers must be finite")
        object.__setattr__(self, "payload", vals)


def checksum(body: bytes) -> bytes:
    return b"%04X" % binascii.crc_hqx(body, 0xFFFF)


def encode_message(msg: Message) -> bytes:
    payload = ",".join(repr(v) for v in msg.payload).encode("ascii")
    body = b"%s,%d,%d:%s" % (msg.kind.encode("ascii"), msg.seq, len(payload), payload)
    return b"$" + body + b"*" + checksum(body) + b"\n"


def _parse_number(tok: bytes) -> float:
    try:
        v = float(tok.decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FrameError(f"bad number {tok!r}") from exc
    if not math.isfinite(v):
        raise FrameError(f"non-finite number {tok!r}")
    return v


def decode_message(buf: bytes) -> tuple[Message, int]:
    """Decode the frame at the start of ``buf``; return it and the bytes consumed.

    Raises :class:`NeedMoreBytes` if the frame is incomplete and
    :class:`FrameError` if it is malformed or fails its checksum.
    """
    if not buf:
        raise NeedMoreBytes
    if buf[:1] != b"$":
        raise FrameError("frame does not start with '$'")
    colon = buf.find(b":", 1, _MAX_HEADER)
    newline = buf.find(b"\n")
    if colon < 0:
        if newline >= 0 or len(buf) >= _MAX_HEADER:
            raise FrameError("frame header is malformed")
        raise NeedMoreBytes
    parts = buf[1:colon].split(b",")
    if len(parts) != 3 or not all(p.isdigit() for p in parts[1:]):
        raise FrameError("frame header is malformed")
    n = int(parts[2])
    end = colon + 1 + n
    total = end + 6
    if len(buf) < total:
        if 0 <= newline < total - 1:
            raise FrameError("frame terminated early")
        raise NeedMoreBytes
    if buf[end:end + 1] != b"*" or buf[total - 1:total] != b"\n":
        raise FrameError("frame trailer is malformed")
    body = buf[1:end]
    if buf[end + 1:total - 1] != checksum(body):
        raise FrameError("checksum mismatch")
    try:
        kind = parts[0].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FrameError("bad kind token") from exc
    if kind not in KINDS:
        raise FrameError(f"unknown kind {kind!r}")
    payload = buf[colon + 1:end]
    vals = tuple(_parse_number(t) for t in payload.split(b",")) if payload else ()
    return Message(kind, int(parts[1]), vals), total


class FrameReader:
    """Incremental decoder; a bad frame is dropped up to its newline."""

    def __init__(self):
        self.buf = b""

    def feed(self, data: bytes) -> None:
        self.buf += data

    def next(self) -> Message | None:
        try:
            msg, used = decode_message(self.buf)
        except NeedMoreBytes:
            return None
        except FrameError:
            cut = self.buf.find(b"\n")
            nxt = self.buf.find(b"$", 1)
            if cut < 0 and nxt < 0:
                self.buf = b""
            else:
                stops = [i for i in (cut + 1 if cut >= 0 else -1, nxt) if i > 0]
                self.buf = self.buf[min(stops):]
            raise
        self.buf = self.buf[used:]
        return msg


# --------------------------------------------------------------------- link

@dataclass(frozen=True)
class LinkConfig:
    transport: str = "pipe"
    throttle: bool = False
    baud: int = 115200
    cycles: int = 2000
    timeout: float = 30.0

    def __post_init__(self):
        if self.transport not in ("pipe", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.cycles < 1:
            raise ValueError("evaluation cycles must be >= 1")
        if not self.baud > 0 or not self.timeout > 0:
            raise ValueError("baud and timeout must be positive")

    @property
    def bytes_per_second(self) -> float:
        return self.baud / BITS_PER_BYTE


class Link:
    """One endpoint of the byte stream, with optional serial-rate pacing.

    With ``throttle`` on, byte ``k`` of a write goes out at
    ``start + k / rate`` where ``start`` is no earlier than the end of the
    previous write, and the write blocks until its last byte has left.
    ``wire_log`` keeps ``(start, n_bytes)`` per write.
    """

    def __init__(self, sock: socket.socket, cfg: LinkConfig,
                 corrupt: Callable[[int, bytes], bytes] | None = None):
        self.sock = sock
        self.cfg = cfg
        self.reader = FrameReader()
        self.wire_log: list[tuple[float, int]] = []
        self.sent_frames = 0
        self.corrupt = corrupt
        self._free_at = 0.0
        self.last_frame: bytes | None = None
        sock.settimeout(cfg.timeout)

    def send(self, msg: Message, remember: bool = True) -> None:
        frame = encode_message(msg)
        if remember:
            self.last_frame = frame
        self._write(frame)

    def resend(self) -> None:
        if self.last_frame is None:
            raise LinkError("nothing to resend")
        self._write(self.last_frame)

    def _write(self, frame: bytes) -> None:
        out = self.corrupt(self.sent_frames, frame) if self.corrupt else frame
        self.sent_frames += 1
        now = time.monotonic()
        if self.cfg.throttle:
            start = max(now, self._free_at)
            end = start + len(out) / self.cfg.bytes_per_second
            if start > now:
                time.sleep(start - now)
            self.wire_log.append((start, len(out)))
            self._free_at = end
            self._sendall(out)
            rest = end - time.monotonic()
            if rest > 0:
                time.sleep(rest)
        else:
            self.wire_log.append((now, len(out)))
            self._sendall(out)

    def _sendall(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise LinkError(f"send failed: {exc}") from exc

    def receive(self) -> Message:
        """Next message; :class:`FrameError` for a corrupted one."""
        while True:
            msg = self.reader.next()
            if msg is not None:
                return msg
            try:
                data = self.sock.recv(65536)
            except socket.timeout as exc:
                raise TimeoutError("link timed out") from exc
            except OSError as exc:
                raise LinkError(f"receive failed: {exc}") from exc
            if not data:
                raise LinkError("peer closed the link")
            self.reader.feed(data)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def max_window_bytes(wire_log: Sequence[tuple[float, int]], rate: float, window: float = 1.0) -> int:
    """Most bytes on the wire in any half-open window of length ``window``."""
    if not wire_log:
        return 0
    times = np.concatenate([s + np.arange(n) / rate for s, n in wire_log])
    times.sort()
    hi = np.searchsorted(times, times + window, side="left")
    return int(np.max(hi - np.arange(len(times))))


def _exchange(link: Link, msg: Message, expect: Sequence[str], seq: int | None = None) -> Message:
    """Send ``msg`` and wait for a reply of kind ``expect`` (NAK/resend aware)."""
    link.send(msg)
    resends = naks = 0
    while True:
        try:
            reply = link.receive()
        except FrameError:
            naks += 1
            if naks > MAX_RESENDS:
                link.send(Message("ABORT", msg.seq), remember=False)
                raise LinkError(f"reply to frame {msg.seq} corrupted {naks} times")
            link.send(Message("NAK", msg.seq), remember=False)
            continue
        if reply.kind == "NAK":
            resends += 1
            if resends > MAX_RESENDS:
                raise LinkError(f"frame {msg.seq} rejected {resends} times")
            link.resend()
            continue
        if reply.kind == "ABORT":
            raise LinkError("peer aborted the session")
        if reply.kind in expect and (seq is None or reply.seq == seq):
            return reply
        # stale or out-of-order replies are rejected


# ------------------------------------------------------------------- device

@dataclass
class SessionLog:
    entries: list[tuple[int, tuple[float, ...], float]] = field(default_factory=list)
    closed_by: str = ""
    naks_sent: int = 0

    def __eq__(self, other):
        return (isinstance(other, SessionLog) and self.closed_by == other.closed_by
                and self.entries == other.entries)


def hello_payload(task: PlantTask) -> tuple[float, ...]:
    lo, hi = task.bounds()
    return (float(PROTOCOL_VERSION), float(KIND_CODES[task.kind]), float(task.size),
            *lo.tolist(), *hi.tolist(), *task.current().tolist())


def device_serve(task: PlantTask, link: Link) -> SessionLog:
    """Answer candidates with fitness until ABORT, timeout or link loss.

    Each candidate is run for ``task.cycles`` control cycles. On timeout the
    device sends ABORT and closes. Results already computed stay in the log.
    """
    log = SessionLog()
    expected = CANDIDATE_FRAME[task.kind]
    nak_streak = 0
    try:
        while True:
            try:
                msg = link.receive()
            except FrameError:
                nak_streak += 1
                log.naks_sent += 1
                if nak_streak > MAX_RESENDS:
                    log.closed_by = "frame-errors"
                    link.send(Message("ABORT", 0), remember=False)
                    return log
                link.send(Message("NAK", 0), remember=False)
                continue
            nak_streak = 0
            if msg.kind == "ABORT":
                log.closed_by = "ABORT"
                return log
            if msg.kind == "NAK":
                link.resend()
                continue
            if msg.kind == "HELLO":
                link.send(Message("HELLO", msg.seq, hello_payload(task)))
                continue
            if msg.kind != expected:
                link.send(Message("NAK", msg.seq), remember=False)
                continue
            fit = float(task.evaluate(msg.payload))
            if not math.isfinite(fit):
                fit = 1e300
            log.entries.append((msg.seq, msg.payload, fit))
            link.send(Message("RESULT", msg.seq, (fit,)))
    except TimeoutError:
        log.closed_by = "timeout"
        try:
            link.send(Message("ABORT", 0), remember=False)
        except LinkError:
            pass
        return log
    except LinkError:
        log.closed_by = "link-lost"
        return log
    finally:
        link.close()


# ---------------------------------------------------------------- optimizer

@dataclass
class RemoteResult:
    best: np.ndarray
    fitness: float
    history: list[tuple[np.ndarray, float]]
    ga: GAResult


def optimize_remote(ga: GAConfig, link: Link, kind: str,
                    seeds: Sequence[Sequence[float]] | None = None, close: bool = True) -> RemoteResult:
    """GA whose every fitness evaluation is a device round-trip.

    The candidate space comes from the device's HELLO; its current
    candidate is seeded unless ``seeds`` is given.
    """
    history: list[tuple[np.ndarray, float]] = []
    try:
        hello = _exchange(link, Message("HELLO", 0, (float(PROTOCOL_VERSION),)), ("HELLO",))
        ver, code, size = hello.payload[:3]
        size = int(size)
        if int(ver) != PROTOCOL_VERSION or int(code) != KIND_CODES[kind]:
            raise LinkError(f"device serves a different candidate kind or protocol ({hello.payload[:3]})")
        p = np.array(hello.payload[3:])
        if p.size != 3 * size:
            raise LinkError("device HELLO has the wrong length")
        lo, hi, current = p[:size], p[size:2 * size], p[2 * size:]
        frame_kind = CANDIDATE_FRAME[kind]
        counter = [0]

        def fitness(g):
            counter[0] += 1
            seq = counter[0]
            reply = _exchange(link, Message(frame_kind, seq, tuple(g.tolist())), ("RESULT",), seq)
            f = reply.payload[0]
            history.append((g.copy(), f))
            return f

        res = run_ga(fitness, lo, hi, ga, seeds=[current] if seeds is None else seeds)
        if close:
            link.send(Message("ABORT", counter[0] + 1), remember=False)
        return RemoteResult(res.best, res.fitness, history, res)
    except (LinkError, TimeoutError) as exc:
        raise RemoteOptimizationError(f"link failure: {exc}", history) from exc
    finally:
        if close:
            link.close()


# ------------------------------------------------------------------ helpers

def connected_pair(cfg: LinkConfig) -> tuple[socket.socket, socket.socket]:
    if cfg.transport == "pipe":
        return socket.socketpair()
    srv = socket.create_server(("127.0.0.1", 0))
    try:
        a = socket.create_connection(srv.getsockname())
        b, _ = srv.accept()
    finally:
        srv.close()
    return a, b


@contextmanager
def loopback(task: PlantTask, cfg: LinkConfig,
             corrupt_device: Callable[[int, bytes], bytes] | None = None,
             corrupt_optimizer: Callable[[int, bytes], bytes] | None = None):
    """Run a device for ``task`` on a background thread; yield the optimizer link.

    After the block, ``holder['log']`` is the device's session log and
    ``holder['device_link']`` its link.
    """
    a, b = connected_pair(cfg)
    opt = Link(a, cfg, corrupt_optimizer)
    dev = Link(b, cfg, corrupt_device)
    holder: dict = {"device_link": dev}

    def serve():
        holder["log"] = device_serve(task, dev)

    th = threading.Thread(target=serve, daemon=True)
    th.start()
    try:
        yield opt, holder
    finally:
        opt.close()
        th.join(cfg.timeout + 5.0)


def optimize_loopback(task: PlantTask, ga: GAConfig, cfg: LinkConfig | None = None) -> RemoteResult:
    cfg = cfg or LinkConfig()
    with loopback(task, cfg) as (link, _):
        return optimize_remote(ga, link, task.kind)


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
