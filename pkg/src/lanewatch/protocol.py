"""Line-delimited TCP protocol between perception and prediction, plus the
actuation byte stream toward the longitudinal controller.

Wire grammar (ASCII, LF-terminated):

    FEAT,<seq>,<timestamp_ms>,<12 comma-separated category labels>
    PRED,<seq>,<intention>,<p_llc>,<p_lk>,<p_rlc>      probabilities %.6f
    ERR,<seq>,<reason>
    ACT,BRAKE | ACT,CRUISE                             actuation channel
    PING -> PONG                                       liveness check

The server answers exactly one line per received line and forwards one ACT
line per successful prediction; a malformed line yields an ERR reply and the
connection stays open.
"""

from __future__ import annotations

import logging
import socket
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .features import (
    DEFAULT_PRESET,
    FeatureVector,
    KinematicSnapshot,
    features_from_snapshot,
)
from .table import PredictionTable, TableMissError, lookup

logger = logging.getLogger(__name__)

MAX_LINE_BYTES = 4096
BRAKE = "BRAKE"
CRUISE = "CRUISE"
_INTENTIONS = ("LLC", "LK", "RLC")


class FramingError(ValueError):
    """A line does not decode to exactly one valid message."""


class ProtocolError(RuntimeError):
    """The peer violated the request/response contract (ordering, transport)."""


@dataclass(frozen=True)
class FeatureMessage:
    seq: int
    timestamp_ms: int
    features: FeatureVector


@dataclass(frozen=True)
class PredictionMessage:
    seq: int
    intention: str
    p_llc: float
    p_lk: float
    p_rlc: float


def actuation_for(intention: str) -> str:
    """Braking policy: stop for a left lane change, otherwise keep cruising."""
    return BRAKE if intention == "LLC" else CRUISE


# --- encoding / decoding -----------------------------------------------------

def encode_feature(msg: FeatureMessage) -> str:
    return f"FEAT,{msg.seq},{msg.timestamp_ms},{msg.features.token()}\n"


def decode_feature(line: str) -> FeatureMessage:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 15 or parts[0] != "FEAT":
        raise FramingError(f"expected 15-field FEAT line, got {len(parts)} fields")
    try:
        seq = int(parts[1])
        ts = int(parts[2])
    except ValueError as exc:
        raise FramingError(f"non-numeric seq/timestamp: {exc}") from exc
    try:
        features = FeatureVector(parts[3:])
    except ValueError as exc:
        raise FramingError(str(exc)) from exc
    return FeatureMessage(seq, ts, features)


def encode_prediction(msg: PredictionMessage) -> str:
    # Round the first two probabilities and let the third absorb the residue,
    # keeping the printed triple summing to 1 within 1e-6.
    p1 = round(msg.p_llc, 6)
    p2 = round(msg.p_lk, 6)
    p3 = max(0.0, round(1.0 - p1 - p2, 6))
    return f"PRED,{msg.seq},{msg.intention},{p1:.6f},{p2:.6f},{p3:.6f}\n"


def decode_prediction(line: str) -> PredictionMessage:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 6 or parts[0] != "PRED":
        raise FramingError(f"expected 6-field PRED line, got {len(parts)} fields")
    try:
        seq = int(parts[1])
    except ValueError as exc:
        raise FramingError(f"non-numeric seq: {exc}") from exc
    intention = parts[2]
    if intention not in _INTENTIONS:
        raise FramingError(f"unknown intention token {intention!r}")
    try:
        probs = [float(x) for x in parts[3:]]
    except ValueError as exc:
        raise FramingError(f"bad probability: {exc}") from exc
    if any(p < 0.0 or p > 1.0 for p in probs):
        raise FramingError(f"probabilities outside [0, 1]: {probs}")
    if abs(sum(probs) - 1.0) > 1e-6:
        raise FramingError(f"probabilities sum to {sum(probs)}, expected 1 within 1e-6")
    return PredictionMessage(seq, intention, *probs)


def encode_actuation(command: str) -> str:
    if command not in (BRAKE, CRUISE):
        raise ValueError(f"unknown actuation command {command!r}")
    return f"ACT,{command}\n"


def decode_actuation(line: str) -> str:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 2 or parts[0] != "ACT" or parts[1] not in (BRAKE, CRUISE):
        raise FramingError(f"malformed actuation line {line!r}")
    return parts[1]


def encode_error(seq: int, reason: str) -> str:
    return f"ERR,{seq},{reason}\n"


# --- byte-stream helpers -----------------------------------------------------

class LineReader:
    """Accumulates socket bytes and yields complete LF-terminated lines."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buffer = b""

    def readline(self) -> bytes | None:
        """Next full line, or None once the peer closed the stream.

        Raises FramingError when a line exceeds MAX_LINE_BYTES.
        """
        while b"\n" not in self._buffer:
            if len(self._buffer) > MAX_LINE_BYTES:
                raise FramingError("line exceeds maximum length")
            chunk = self._sock.recv(4096)
            if not chunk:
                return None
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        if len(line) > MAX_LINE_BYTES:
            raise FramingError("line exceeds maximum length")
        return line + b"\n"


class SocketLineSink:
    """Actuation sink that writes lines to an outbound TCP connection."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port), timeout=10.0)

    def send_line(self, line: str) -> None:
        self._sock.sendall(line.encode("ascii"))

    def close(self) -> None:
        self._sock.close()


class FileLineSink:
    """Actuation sink that appends lines to a file or pipe path."""

    def __init__(self, path):
        self._fh = open(path, "a", encoding="ascii", newline="\n")

    def send_line(self, line: str) -> None:
        self._fh.write(line)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class BufferLineSink:
    """In-memory actuation sink for tests and in-process runs."""

    def __init__(self):
        self.lines: list[str] = []

    def send_line(self, line: str) -> None:
        self.lines.append(line)

    def close(self) -> None:
        pass


# --- server ------------------------------------------------------------------

class PredictionServer:
    """Sequential one-client-at-a-time prediction endpoint over a lookup table."""

    def __init__(self, table: PredictionTable, host: str = "127.0.0.1", port: int = 0,
                 actuation=None):
        self._table = table
        self._actuation = actuation if actuation is not None else BufferLineSink()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self._listener.settimeout(0.2)
        self._stopped = False

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    def stop(self) -> None:
        self._stopped = True

    def close(self) -> None:
        self.stop()
        self._listener.close()
        self._actuation.close()

    def serve_forever(self) -> None:
        """Accept clients until stop(); client disconnects return to accepting."""
        try:
            while not self._stopped:
                try:
                    conn, peer = self._listener.accept()
                except socket.timeout:
                    continue
                logger.debug("client connected: %s", peer)
                with conn:
                    conn.settimeout(0.2)
                    self._serve_client(conn)
        finally:
            self._listener.close()

    def _serve_client(self, conn: socket.socket) -> None:
        reader = LineReader(conn)
        while not self._stopped:
            try:
                raw = reader.readline()
            except socket.timeout:
                continue
            except FramingError:
                conn.sendall(encode_error(0, "line_too_long").encode("ascii"))
                return
            except OSError:
                return
            if raw is None:
                return
            try:
                conn.sendall(self._handle_line(raw).encode("ascii"))
            except OSError:
                return

    def _handle_line(self, raw: bytes) -> str:
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            return encode_error(0, "non_ascii_line")
        if line.strip() == "PING":
            return "PONG\n"
        try:
            msg = decode_feature(line)
        except FramingError as exc:
            seq = _best_effort_seq(line)
            return encode_error(seq, _reason_token(str(exc)))
        try:
            pred = lookup(self._table, msg.features)
        except TableMissError:
            return encode_error(msg.seq, "table_miss")
        self._actuation.send_line(encode_actuation(actuation_for(pred.intention)))
        return encode_prediction(
            PredictionMessage(msg.seq, pred.intention, pred.p_llc, pred.p_lk, pred.p_rlc)
        )


def _best_effort_seq(line: str) -> int:
    parts = line.split(",")
    if len(parts) > 1:
        try:
            return int(parts[1])
        except ValueError:
            pass
    return 0


def _reason_token(reason: str) -> str:
    safe = "".join(c if c.isalnum() else "_" for c in reason.strip())
    return safe[:80] or "malformed_line"


# --- client ------------------------------------------------------------------

@dataclass
class TickResult:
    prediction: PredictionMessage
    latency_s: float


class PerceptionClient:
    """Synchronous per-tick FEAT/PRED exchange with round-trip timing."""

    def __init__(self, host: str, port: int, retries: int = 3, retry_delay_s: float = 0.2):
        last_err = None
        for attempt in range(retries + 1):
            try:
                self._sock = socket.create_connection((host, port), timeout=10.0)
                break
            except OSError as exc:
                last_err = exc
                if attempt < retries:
                    time.sleep(retry_delay_s)
        else:
            raise ProtocolError(
                f"could not connect to {host}:{port} after {retries} retries: {last_err}"
            )
        self._reader = LineReader(self._sock)
        self._seq = 0

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, features: FeatureVector, timestamp_ms: int) -> TickResult:
        """Send one FEAT line and block for its PRED reply."""
        self._seq += 1
        line = encode_feature(FeatureMessage(self._seq, timestamp_ms, features))
        started = time.perf_counter()
        self._sock.sendall(line.encode("ascii"))
        reply = self._reader.readline()
        latency = time.perf_counter() - started
        if reply is None:
            raise ProtocolError("server closed the connection mid-request")
        text = reply.decode("ascii")
        if text.startswith("ERR,"):
            raise ProtocolError(f"server error reply: {text.strip()}")
        msg = decode_prediction(text)
        if msg.seq != self._seq:
            raise ProtocolError(f"sequence mismatch: sent {self._seq}, got {msg.seq}")
        return TickResult(msg, latency)

    def run(
        self,
        snapshots: Iterable[KinematicSnapshot],
        rate_hz: float | None = None,
        preset=DEFAULT_PRESET,
    ) -> list[TickResult]:
        """Stream snapshots at an optional fixed rate; returns per-tick results."""
        results = []
        period = 1.0 / rate_hz if rate_hz else 0.0
        next_due = time.perf_counter()
        for snap in snapshots:
            if period:
                now = time.perf_counter()
                if now < next_due:
                    time.sleep(next_due - now)
                next_due += period
            features = features_from_snapshot(snap, preset)
            results.append(self.request(features, int(snap.timestamp * 1000)))
        return results


class ActuationListener:
    """Accepts the server's actuation connection and reads ACT lines."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self._conn = None
        self._reader = None

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    def accept(self, timeout_s: float = 10.0) -> None:
        self._listener.settimeout(timeout_s)
        self._conn, _ = self._listener.accept()
        self._conn.settimeout(10.0)
        self._reader = LineReader(self._conn)

    def read_command(self) -> str:
        if self._reader is None:
            raise ProtocolError("actuation listener has no connection")
        raw = self._reader.readline()
        if raw is None:
            raise ProtocolError("actuation stream closed")
        return decode_actuation(raw.decode("ascii"))

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
        self._listener.close()
