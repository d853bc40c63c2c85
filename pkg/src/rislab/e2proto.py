"""Binary framing and messages for the RIS service model.

Frame: ``4F 52 | version u8 | msg_type u8 | payload_len u32 | payload``.
Integers are unsigned big-endian, floats IEEE-754 binary64 big-endian and
complex values travel as (real, imag) pairs in row-major element order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

MAGIC = b"OR"
VERSION = 1
HEADER = struct.Struct(">2sBBI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1 << 24
MAX_PHASE_BITS = 16

MODE_DISCRETE = 0
MODE_CONTINUOUS = 1
MODE_BEAM = 2  # reserved, receivers answer ACK_UNSUPPORTED_MODE

STATUS_OK = 0
STATUS_REJECTED = 1

ACK_OK = 0
ACK_BAD_LENGTH = 1
ACK_UNSUPPORTED_MODE = 2
ACK_UNKNOWN_RIS = 3


class ProtocolError(ValueError):
    """A message violates its own invariants and cannot be encoded."""


class MalformedFrame(ValueError):
    """Base for every decode rejection."""


class BadMagic(MalformedFrame):
    pass


class UnsupportedVersion(MalformedFrame):
    pass


class UnknownMessageType(MalformedFrame):
    pass


class PayloadTooLarge(MalformedFrame):
    pass


class LengthMismatch(MalformedFrame):
    """Payload size disagrees with the message's own fields."""


class TruncatedPayload(MalformedFrame):
    """The stream ended before the declared payload length."""


class InvalidField(MalformedFrame):
    pass


def _complex_tuple(values) -> tuple[complex, ...]:
    return tuple(complex(v) for v in np.asarray(values, dtype=complex).reshape(-1).tolist())


@dataclass(frozen=True)
class SetupRequest:
    ris_id: int
    rows: int
    cols: int
    phase_bits: int
    element_aperture_m: float
    panel_width_m: float
    panel_height_m: float
    fc_hz: float

    TYPE = 0x01
    _S = struct.Struct(">IHHBdddd")

    def _payload(self) -> bytes:
        if self.phase_bits > MAX_PHASE_BITS:
            raise ProtocolError(f"phase_bits {self.phase_bits} exceeds {MAX_PHASE_BITS}")
        return self._S.pack(
            self.ris_id, self.rows, self.cols, self.phase_bits,
            self.element_aperture_m, self.panel_width_m, self.panel_height_m, self.fc_hz,
        )

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) != cls._S.size:
            raise LengthMismatch(f"SetupRequest payload is {len(p)} bytes, expected {cls._S.size}")
        return cls(*cls._S.unpack(p))


@dataclass(frozen=True)
class SetupResponse:
    ris_id: int
    status: int

    TYPE = 0x02
    _S = struct.Struct(">IB")

    def _payload(self) -> bytes:
        return self._S.pack(self.ris_id, self.status)

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) != cls._S.size:
            raise LengthMismatch(f"SetupResponse payload is {len(p)} bytes, expected {cls._S.size}")
        return cls(*cls._S.unpack(p))


@dataclass(frozen=True)
class SubscriptionRequest:
    ris_id: int
    report_period_ms: int

    TYPE = 0x03
    _S = struct.Struct(">II")

    def _payload(self) -> bytes:
        return self._S.pack(self.ris_id, self.report_period_ms)

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) != cls._S.size:
            raise LengthMismatch(f"SubscriptionRequest payload is {len(p)} bytes, expected {cls._S.size}")
        return cls(*cls._S.unpack(p))


@dataclass(frozen=True)
class SubscriptionResponse:
    ris_id: int
    status: int

    TYPE = 0x04
    _S = struct.Struct(">IB")

    def _payload(self) -> bytes:
        return self._S.pack(self.ris_id, self.status)

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) != cls._S.size:
            raise LengthMismatch(f"SubscriptionResponse payload is {len(p)} bytes, expected {cls._S.size}")
        return cls(*cls._S.unpack(p))


@dataclass(frozen=True)
class Indication:
    ris_id: int
    seq: int
    n: int
    h_br: tuple[complex, ...]
    h_ru: tuple[complex, ...]
    h_bu: complex
    los_flag: int
    timestamp_us: int

    TYPE = 0x05
    _HEAD = struct.Struct(">IQI")
    _TAIL = struct.Struct(">ddBQ")

    def __post_init__(self):
        object.__setattr__(self, "h_br", _complex_tuple(self.h_br))
        object.__setattr__(self, "h_ru", _complex_tuple(self.h_ru))
        object.__setattr__(self, "h_bu", complex(self.h_bu))

    def _payload(self) -> bytes:
        if len(self.h_br) != self.n or len(self.h_ru) != self.n:
            raise ProtocolError(f"Indication vectors have {len(self.h_br)}/{len(self.h_ru)} entries, N={self.n}")
        vec = np.empty(4 * self.n, dtype=">f8")
        vec[: 2 * self.n] = np.asarray(self.h_br, dtype=complex).view(float)
        vec[2 * self.n :] = np.asarray(self.h_ru, dtype=complex).view(float)
        return (
            self._HEAD.pack(self.ris_id, self.seq, self.n)
            + vec.tobytes()
            + self._TAIL.pack(self.h_bu.real, self.h_bu.imag, self.los_flag, self.timestamp_us)
        )

    @classmethod
    def expected_size(cls, n: int) -> int:
        return cls._HEAD.size + 32 * n + cls._TAIL.size

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) < cls._HEAD.size:
            raise LengthMismatch("Indication payload shorter than its fixed header")
        ris_id, seq, n = cls._HEAD.unpack_from(p)
        if len(p) != cls.expected_size(n):
            raise LengthMismatch(f"Indication with N={n} needs {cls.expected_size(n)} bytes, got {len(p)}")
        vec = np.frombuffer(p, dtype=">f8", count=4 * n, offset=cls._HEAD.size).astype(float)
        h = vec.view(complex)
        re, im, los, ts = cls._TAIL.unpack_from(p, cls._HEAD.size + 32 * n)
        return cls(ris_id, seq, n, h[:n], h[n:], complex(re, im), los, ts)

    def channels(self):
        """The carried coefficients as numpy arrays ``(h_br, h_ru, h_bu)``."""
        return np.array(self.h_br, dtype=complex), np.array(self.h_ru, dtype=complex), self.h_bu


@dataclass(frozen=True)
class ControlRequest:
    """Per-element phase command.

    ``phases`` holds level indices for mode 0 and radians for mode 1. Mode 2
    (beam direction) is reserved and carries no phase payload.
    """

    ris_id: int
    seq_echo: int
    n: int
    mode: int
    phases: tuple = ()

    TYPE = 0x06
    _HEAD = struct.Struct(">IQIB")

    def __post_init__(self):
        if self.mode == MODE_DISCRETE:
            vals = tuple(int(v) for v in np.asarray(self.phases).reshape(-1).tolist())
        elif self.mode == MODE_CONTINUOUS:
            vals = tuple(float(v) for v in np.asarray(self.phases, dtype=float).reshape(-1).tolist())
        else:
            vals = tuple(self.phases)
        object.__setattr__(self, "phases", vals)

    def _payload(self) -> bytes:
        head = self._HEAD.pack(self.ris_id, self.seq_echo, self.n, self.mode)
        if self.mode == MODE_DISCRETE:
            if len(self.phases) != self.n:
                raise ProtocolError(f"ControlRequest carries {len(self.phases)} indices, N={self.n}")
            if any(not 0 <= v < 1 << 16 for v in self.phases):
                raise ProtocolError("level index does not fit in u16")
            return head + np.asarray(self.phases, dtype=">u2").tobytes()
        if self.mode == MODE_CONTINUOUS:
            if len(self.phases) != self.n:
                raise ProtocolError(f"ControlRequest carries {len(self.phases)} phases, N={self.n}")
            return head + np.asarray(self.phases, dtype=">f8").tobytes()
        if self.mode == MODE_BEAM:
            if self.phases:
                raise ProtocolError("beam-direction mode carries no phase payload")
            return head
        raise ProtocolError(f"unknown control mode {self.mode}")

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) < cls._HEAD.size:
            raise LengthMismatch("ControlRequest payload shorter than its fixed header")
        ris_id, seq, n, mode = cls._HEAD.unpack_from(p)
        body = p[cls._HEAD.size :]
        if mode == MODE_DISCRETE:
            if len(body) != 2 * n:
                raise LengthMismatch(f"discrete ControlRequest with N={n} needs {2 * n} payload bytes, got {len(body)}")
            vals = np.frombuffer(body, dtype=">u2").astype(np.int64)
        elif mode == MODE_CONTINUOUS:
            if len(body) != 8 * n:
                raise LengthMismatch(f"continuous ControlRequest with N={n} needs {8 * n} payload bytes, got {len(body)}")
            vals = np.frombuffer(body, dtype=">f8").astype(float)
        elif mode == MODE_BEAM:
            if body:
                raise LengthMismatch("beam-direction ControlRequest carries no payload")
            vals = ()
        else:
            raise InvalidField(f"unknown control mode {mode}")
        return cls(ris_id, seq, n, mode, vals)


@dataclass(frozen=True)
class ControlAck:
    ris_id: int
    seq_echo: int
    status: int
    applied_rate: float = 0.0

    TYPE = 0x07
    _S = struct.Struct(">IQBd")

    def _payload(self) -> bytes:
        return self._S.pack(self.ris_id, self.seq_echo, self.status, self.applied_rate)

    @classmethod
    def _parse(cls, p: bytes):
        if len(p) != cls._S.size:
            raise LengthMismatch(f"ControlAck payload is {len(p)} bytes, expected {cls._S.size}")
        return cls(*cls._S.unpack(p))


E2Message = Union[
    SetupRequest, SetupResponse, SubscriptionRequest, SubscriptionResponse, Indication, ControlRequest, ControlAck
]
MESSAGE_TYPES = {
    cls.TYPE: cls
    for cls in (SetupRequest, SetupResponse, SubscriptionRequest, SubscriptionResponse, Indication, ControlRequest, ControlAck)
}


def encode(msg: E2Message) -> bytes:
    try:
        payload = msg._payload()
    except struct.error as exc:
        raise ProtocolError(f"{type(msg).__name__}: field out of range ({exc})") from exc
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD}-byte cap")
    return HEADER.pack(MAGIC, VERSION, msg.TYPE, len(payload)) + payload


def decode(buf, eof: bool = False) -> tuple[E2Message, int] | None:
    """Parse one frame from the front of ``buf``.

    Returns ``(message, consumed)``, or ``None`` when ``buf`` is a strict
    prefix of a frame that may still be valid. Raises a
    :class:`MalformedFrame` subclass as soon as the bytes seen so far rule
    out a valid frame; nothing past the declared frame is ever read. With
    ``eof=True`` the input is final and an incomplete frame raises
    :class:`TruncatedPayload` instead of returning ``None``.
    """
    buf = memoryview(buf)
    have = len(buf)
    if bytes(buf[: min(have, 2)]) != MAGIC[: min(have, 2)]:
        raise BadMagic(f"bad magic {bytes(buf[:2]).hex()}")
    if have >= 3 and buf[2] != VERSION:
        raise UnsupportedVersion(f"unsupported version {buf[2]}")
    if have >= 4 and buf[3] not in MESSAGE_TYPES:
        raise UnknownMessageType(f"unknown msg_type 0x{buf[3]:02x}")
    if have < HEADER_SIZE:
        if eof and have:
            raise TruncatedPayload(f"stream ended inside the frame header ({have} bytes)")
        return None
    _, _, msg_type, length = HEADER.unpack_from(buf)
    if length > MAX_PAYLOAD:
        raise PayloadTooLarge(f"declared payload of {length} bytes exceeds the cap")
    end = HEADER_SIZE + length
    if have < end:
        if eof:
            raise TruncatedPayload(f"declared {length} payload bytes, stream holds {have - HEADER_SIZE}")
        return None
    msg = MESSAGE_TYPES[msg_type]._parse(bytes(buf[HEADER_SIZE:end]))
    return msg, end


class FrameBuffer:
    """Accumulates stream bytes and yields complete messages. One per connection."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    def __len__(self) -> int:
        return len(self._buf)

    def next_message(self) -> E2Message | None:
        got = decode(self._buf)
        if got is None:
            return None
        msg, used = got
        del self._buf[:used]
        return msg
