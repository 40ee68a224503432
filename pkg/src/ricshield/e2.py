"""E2-lite style framing: length-prefixed binary messages over a reliable stream.

Frame layout (multi-byte integers big-endian):
  "ORAN" | version u8 = 1 | msg_type u8 | payload_len u32 | payload

Payloads:
  IQ_REPORT        u32 sample count | f64 sample_rate_hz | (f32 re, f32 im) pairs
  SPECTROGRAM_BLOB 16-byte key id | SGRM image bytes
  CONTROL          u8 class | u8 action | f32 confidence
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .signals import IqBuffer, Label

FRAME_MAGIC = b"ORAN"
FRAME_VERSION = 1
HEADER_LEN = 10
MAX_PAYLOAD = 64 * 1024 * 1024
KEY_ID_LEN = 16


class ProtocolError(Exception):
    """Malformed frame or payload."""


class TruncatedFrameError(ProtocolError):
    """Stream ended inside a frame."""


class MsgType(enum.IntEnum):
    IQ_REPORT = 1
    SPECTROGRAM_BLOB = 2
    CONTROL = 3


class Action(enum.IntEnum):
    ADAPTIVE_MCS = 0
    FIXED_MCS = 1


def action_for(label: Label) -> Action:
    """Clean uplink keeps adaptive MCS; any interference pins it."""
    return Action.ADAPTIVE_MCS if label == Label.SOI else Action.FIXED_MCS


@dataclass(frozen=True)
class ControlDecision:
    predicted_class: Label
    action: Action
    confidence: float

    def __post_init__(self) -> None:
        expected = action_for(self.predicted_class)
        if self.action != expected:
            raise ValueError(
                f"action {self.action.name} inconsistent with class "
                f"{self.predicted_class.name} (must be {expected.name})")


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    payload: bytes


def encode_frame(msg_type: MsgType, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return FRAME_MAGIC + struct.pack(">BBI", FRAME_VERSION, int(msg_type), len(payload)) + payload


def decode_header(header: bytes) -> tuple[MsgType, int]:
    if len(header) < HEADER_LEN:
        raise TruncatedFrameError(f"header needs {HEADER_LEN} bytes, got {len(header)}")
    if header[:4] != FRAME_MAGIC:
        raise ProtocolError(f"bad magic {header[:4]!r}")
    version, msg_type, payload_len = struct.unpack(">BBI", header[4:HEADER_LEN])
    if version != FRAME_VERSION:
        raise ProtocolError(f"unsupported version {version}")
    try:
        parsed = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown msg_type {msg_type}") from None
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {payload_len} bytes exceeds {MAX_PAYLOAD}")
    return parsed, payload_len


def decode_frame(buf: bytes) -> tuple[Frame, int]:
    """Decode one frame from the head of buf; returns (frame, bytes consumed)."""
    msg_type, payload_len = decode_header(buf[:HEADER_LEN])
    end = HEADER_LEN + payload_len
    if len(buf) < end:
        raise TruncatedFrameError(
            f"frame announces {payload_len} payload bytes, only {len(buf) - HEADER_LEN} present")
    return Frame(msg_type, buf[HEADER_LEN:end]), end


def read_frame(recv) -> Frame | None:
    """Read one frame via recv(n) -> bytes. Returns None on clean EOF at a
    frame boundary; raises TruncatedFrameError on EOF inside a frame."""
    header = _read_exact(recv, HEADER_LEN, allow_eof=True)
    if header is None:
        return None
    msg_type, payload_len = decode_header(header)
    payload = _read_exact(recv, payload_len, allow_eof=False) if payload_len else b""
    return Frame(msg_type, payload or b"")


def _read_exact(recv, n: int, allow_eof: bool) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = recv(n - got)
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise TruncatedFrameError(f"stream ended after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# -- payload codecs -------------------------------------------------------------


def encode_iq_report(iq: IqBuffer) -> bytes:
    pairs = np.empty((len(iq), 2), dtype=">f4")
    pairs[:, 0] = iq.samples.real
    pairs[:, 1] = iq.samples.imag
    return struct.pack(">Id", len(iq), iq.sample_rate_hz) + pairs.tobytes()


def decode_iq_report(payload: bytes) -> IqBuffer:
    if len(payload) < 12:
        raise ProtocolError("IQ_REPORT payload shorter than its header")
    count, rate = struct.unpack(">Id", payload[:12])
    expected = 12 + count * 8
    if len(payload) != expected:
        raise ProtocolError(f"IQ_REPORT length {len(payload)} != expected {expected}")
    pairs = np.frombuffer(payload, dtype=">f4", offset=12).reshape(count, 2)
    return IqBuffer(pairs[:, 0].astype(np.float64) + 1j * pairs[:, 1].astype(np.float64), rate)


def encode_spectrogram_blob(key_id: bytes, sgrm: bytes) -> bytes:
    if len(key_id) != KEY_ID_LEN:
        raise ProtocolError(f"key id must be {KEY_ID_LEN} bytes")
    return key_id + sgrm


def decode_spectrogram_blob(payload: bytes) -> tuple[bytes, bytes]:
    if len(payload) <= KEY_ID_LEN:
        raise ProtocolError("SPECTROGRAM_BLOB payload too short")
    return payload[:KEY_ID_LEN], payload[KEY_ID_LEN:]


def encode_control(decision: ControlDecision) -> bytes:
    return struct.pack(">BBf", int(decision.predicted_class), int(decision.action),
                       decision.confidence)


def decode_control(payload: bytes) -> ControlDecision:
    if len(payload) != 6:
        raise ProtocolError(f"CONTROL payload must be 6 bytes, got {len(payload)}")
    cls, action, confidence = struct.unpack(">BBf", payload)
    try:
        label = Label(cls)
        act = Action(action)
    except ValueError:
        raise ProtocolError(f"unknown class/action bytes ({cls}, {action})") from None
    try:
        return ControlDecision(label, act, confidence)
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None
