"""Framed wire protocol with byte-exact traffic accounting.

Every message is [u32 length (big-endian) | u8 type | u16 phase | payload].
Both endpoints log (direction, type, phase, length, wall time) per frame;
byte totals therefore reconcile with socket-level counts exactly, and a
transcript digest over the raw frames gives the determinism check its
byte-identity notion (timestamps are metadata, never part of a frame).
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import time
from dataclasses import dataclass, field

# phases (strictly ordered per session)
PH_SETUP, PH_HE, PH_GC_STASH, PH_GC_CLUSTER, PH_PIR, PH_MERGE, PH_FEEDBACK = range(7)
PHASE_NAMES = ["setup", "he", "gc-stash", "gc-cluster", "pir", "merge", "feedback"]

# frame types
(T_HELLO, T_HELLO_OK, T_GC_TABLES, T_GC_CLOUD_LABELS, T_GC_CONST_LABELS,
 T_GC_DECODE, T_GC_SELECTS, T_OT_BASE_C, T_OT_BASE_PK, T_OT_BASE_ENC,
 T_OT_EXT_U, T_OT_EXT_LABELS, T_HE_CT, T_HE_RESULT, T_RESULT,
 T_FEEDBACK, T_FEEDBACK_OK, T_SETUP_REQ, T_SETUP_STREAMS, T_SETUP_MASKED_KEY,
 T_SETUP_BUNDLE, T_ERROR, T_BYE) = range(1, 24)

TYPE_NAMES = {v: k[2:].lower() for k, v in list(globals().items())
              if k.startswith("T_") and isinstance(v, int)}

_HEADER = struct.Struct(">IBH")


class ProtocolError(RuntimeError):
    pass


@dataclass
class FrameLog:
    direction: str   # "send" | "recv"
    ftype: int
    phase: int
    nbytes: int      # full frame size including header
    t_wall: float


@dataclass
class Transcript:
    frames: list[FrameLog] = field(default_factory=list)
    _digest: "hashlib._Hash" = field(default_factory=lambda: hashlib.sha256())

    def log(self, direction: str, ftype: int, phase: int, payload: bytes) -> None:
        self.frames.append(FrameLog(direction, ftype, phase,
                                    _HEADER.size + len(payload), time.monotonic()))
        self._digest.update(direction.encode())
        self._digest.update(_HEADER.pack(len(payload), ftype, phase))
        self._digest.update(payload)

    def digest(self) -> str:
        return self._digest.hexdigest()

    def phase_bytes(self) -> dict[str, dict[str, int]]:
        out = {name: {"sent": 0, "recv": 0} for name in PHASE_NAMES}
        for fr in self.frames:
            key = "sent" if fr.direction == "send" else "recv"
            out[PHASE_NAMES[fr.phase]][key] += fr.nbytes
        return out

    def total_bytes(self) -> int:
        return sum(fr.nbytes for fr in self.frames)


class Channel:
    """In-process loopback endpoint; metered like a socket."""

    def __init__(self, out_q: queue.Queue, in_q: queue.Queue, name: str = ""):
        self._out = out_q
        self._in = in_q
        self.name = name
        self.transcript = Transcript()

    def send(self, ftype: int, phase: int, payload: bytes = b"") -> None:
        self.transcript.log("send", ftype, phase, payload)
        self._out.put((ftype, phase, bytes(payload)))

    def recv(self, expect: int | None = None, timeout: float = 600.0):
        try:
            ftype, phase, payload = self._in.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError(f"{self.name}: channel timed out") from None
        self.transcript.log("recv", ftype, phase, payload)
        if ftype == T_ERROR:
            raise ProtocolError(f"{self.name}: peer error: {payload.decode()}")
        if expect is not None and ftype != expect:
            raise ProtocolError(f"{self.name}: expected frame {TYPE_NAMES.get(expect)}, "
                                f"got {TYPE_NAMES.get(ftype)}")
        return ftype, phase, payload


def channel_pair(a_name: str = "a", b_name: str = "b") -> tuple[Channel, Channel]:
    qa, qb = queue.Queue(), queue.Queue()
    return Channel(qa, qb, a_name), Channel(qb, qa, b_name)


class SocketChannel:
    """Same interface over TCP."""

    def __init__(self, sock: socket.socket, name: str = ""):
        self._sock = sock
        self.name = name
        self.transcript = Transcript()

    def send(self, ftype: int, phase: int, payload: bytes = b"") -> None:
        self.transcript.log("send", ftype, phase, payload)
        self._sock.sendall(_HEADER.pack(len(payload), ftype, phase) + payload)

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise ProtocolError(f"{self.name}: connection closed")
            buf += chunk
        return bytes(buf)

    def recv(self, expect: int | None = None, timeout: float = 600.0):
        self._sock.settimeout(timeout)
        head = self._recv_exact(_HEADER.size)
        length, ftype, phase = _HEADER.unpack(head)
        payload = self._recv_exact(length) if length else b""
        self.transcript.log("recv", ftype, phase, payload)
        if ftype == T_ERROR:
            raise ProtocolError(f"{self.name}: peer error: {payload.decode()}")
        if expect is not None and ftype != expect:
            raise ProtocolError(f"{self.name}: expected frame {TYPE_NAMES.get(expect)}, "
                                f"got {TYPE_NAMES.get(ftype)}")
        return ftype, phase, payload

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
