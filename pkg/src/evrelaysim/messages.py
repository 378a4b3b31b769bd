"""Front-end protocol messages and their canonical wire encoding.

Every session message travels as: 1 byte tag, 8 byte big-endian session id,
4 byte big-endian payload length, payload. This layout is stable; the test
suite pins exact byte vectors.

The distance-bounding fast exchange uses its own minimal 6-byte datagram
layout (tag, 4 byte big-endian exchange index, 1 byte symbol) because it is
latency-critical and runs before any session exists.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

# Session / discovery tags.
TAG_SDP_REQUEST = 0x01
TAG_SDP_RESPONSE = 0x02
TAG_SESSION_SETUP_REQ = 0x10
TAG_SESSION_SETUP_RES = 0x11
TAG_AUTHORIZATION_REQ = 0x12
TAG_AUTHORIZATION_RES = 0x13
TAG_CHARGE_PARAMETER_REQ = 0x14
TAG_CHARGE_PARAMETER_RES = 0x15
TAG_POWER_DELIVERY_REQ = 0x16
TAG_POWER_DELIVERY_RES = 0x17
TAG_METERING_RECEIPT_REQ = 0x18
TAG_METERING_RECEIPT_RES = 0x19
TAG_SESSION_STOP_REQ = 0x1A
TAG_SESSION_STOP_RES = 0x1B
# Secure-channel handshake and envelope (the TLS stand-in).
TAG_SECURE_REQ = 0x20
TAG_SECURE_RES = 0x21
TAG_SECURE_ENVELOPE = 0x30
# Distance bounding.
TAG_DB_CHALLENGE = 0x40
TAG_DB_RESPONSE = 0x41
TAG_DB_TRANSCRIPT = 0x42

ACTION_START = 1
ACTION_STOP = 2

_HEADER = struct.Struct(">BQI")
_FAST = struct.Struct(">BIB")

FAST_FRAME_LEN = _FAST.size  # 6 bytes
_FAST_TAGS = (TAG_DB_CHALLENGE, TAG_DB_RESPONSE)


class DecodeError(ValueError):
    """Wire bytes do not form a valid frame."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raise ValueError("string field longer than 255 bytes")
    return bytes([len(raw)]) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    if off >= len(buf):
        raise DecodeError("truncated string field")
    n = buf[off]
    end = off + 1 + n
    if end > len(buf):
        raise DecodeError("truncated string field")
    return buf[off + 1:end].decode("utf-8"), end


@dataclass(frozen=True)
class ChargeSchedule:
    """Requested energy transfer. Negative target energy means discharge
    to the grid; power is always positive."""

    target_energy_ws: int
    max_power_w: int
    departure_s: int

    def __post_init__(self):
        if self.max_power_w <= 0:
            raise ValueError("max_power_w must be positive")

    @classmethod
    def from_kwh(cls, target_kwh: float, max_power_kw: float,
                 departure_s: int) -> "ChargeSchedule":
        return cls(target_energy_ws=int(round(target_kwh * 3_600_000)),
                   max_power_w=int(round(max_power_kw * 1_000)),
                   departure_s=departure_s)

    @property
    def target_kwh(self) -> float:
        return self.target_energy_ws / 3_600_000

    @property
    def is_discharge(self) -> bool:
        return self.target_energy_ws < 0

    def pack(self) -> bytes:
        return struct.pack(">qIQ", self.target_energy_ws, self.max_power_w,
                           self.departure_s)

    @classmethod
    def unpack(cls, buf: bytes, off: int = 0) -> "ChargeSchedule":
        t, p, d = struct.unpack_from(">qIQ", buf, off)
        return cls(t, p, d)


_SCHEDULE_LEN = 20


@dataclass(frozen=True)
class SdpRequest:
    TAG = TAG_SDP_REQUEST

    def payload_bytes(self) -> bytes:
        return b""

    @classmethod
    def from_payload(cls, payload: bytes) -> "SdpRequest":
        return cls()


@dataclass(frozen=True)
class SdpResponse:
    TAG = TAG_SDP_RESPONSE
    address: str = ""
    port: int = 15118
    security_level: int = 1  # 1 = secured transport required

    def payload_bytes(self) -> bytes:
        return _pack_str(self.address) + struct.pack(">HB", self.port,
                                                     self.security_level)

    @classmethod
    def from_payload(cls, payload: bytes) -> "SdpResponse":
        addr, off = _unpack_str(payload, 0)
        port, level = struct.unpack_from(">HB", payload, off)
        return cls(address=addr, port=port, security_level=level)


@dataclass(frozen=True)
class SessionSetupReq:
    TAG = TAG_SESSION_SETUP_REQ
    evcc_id: str = ""

    def payload_bytes(self) -> bytes:
        return _pack_str(self.evcc_id)

    @classmethod
    def from_payload(cls, payload: bytes) -> "SessionSetupReq":
        evcc_id, _ = _unpack_str(payload, 0)
        return cls(evcc_id=evcc_id)


@dataclass(frozen=True)
class SessionSetupRes:
    TAG = TAG_SESSION_SETUP_RES

    def payload_bytes(self) -> bytes:
        return b""

    @classmethod
    def from_payload(cls, payload: bytes) -> "SessionSetupRes":
        return cls()


@dataclass(frozen=True)
class AuthorizationReq:
    TAG = TAG_AUTHORIZATION_REQ
    contract_id: str = ""

    def payload_bytes(self) -> bytes:
        return _pack_str(self.contract_id)

    @classmethod
    def from_payload(cls, payload: bytes) -> "AuthorizationReq":
        contract, _ = _unpack_str(payload, 0)
        return cls(contract_id=contract)


@dataclass(frozen=True)
class AuthorizationRes:
    TAG = TAG_AUTHORIZATION_RES
    accepted: bool = False

    def payload_bytes(self) -> bytes:
        return bytes([1 if self.accepted else 0])

    @classmethod
    def from_payload(cls, payload: bytes) -> "AuthorizationRes":
        return cls(accepted=bool(payload[0]))


@dataclass(frozen=True)
class ChargeParameterReq:
    TAG = TAG_CHARGE_PARAMETER_REQ
    schedule: ChargeSchedule = None

    def payload_bytes(self) -> bytes:
        return self.schedule.pack()

    @classmethod
    def from_payload(cls, payload: bytes) -> "ChargeParameterReq":
        return cls(schedule=ChargeSchedule.unpack(payload))


@dataclass(frozen=True)
class ChargeParameterRes:
    TAG = TAG_CHARGE_PARAMETER_RES
    accepted: bool = False
    schedule: ChargeSchedule = None

    def payload_bytes(self) -> bytes:
        return bytes([1 if self.accepted else 0]) + self.schedule.pack()

    @classmethod
    def from_payload(cls, payload: bytes) -> "ChargeParameterRes":
        return cls(accepted=bool(payload[0]),
                   schedule=ChargeSchedule.unpack(payload, 1))


@dataclass(frozen=True)
class PowerDeliveryReq:
    TAG = TAG_POWER_DELIVERY_REQ
    action: int = ACTION_START  # ACTION_START or ACTION_STOP

    def payload_bytes(self) -> bytes:
        return bytes([self.action])

    @classmethod
    def from_payload(cls, payload: bytes) -> "PowerDeliveryReq":
        return cls(action=payload[0])


@dataclass(frozen=True)
class PowerDeliveryRes:
    TAG = TAG_POWER_DELIVERY_RES
    ok: bool = True

    def payload_bytes(self) -> bytes:
        return bytes([1 if self.ok else 0])

    @classmethod
    def from_payload(cls, payload: bytes) -> "PowerDeliveryRes":
        return cls(ok=bool(payload[0]))


@dataclass(frozen=True)
class MeteringReceiptReq:
    TAG = TAG_METERING_RECEIPT_REQ
    evse_id: str = ""
    energy_ws: int = 0
    interval_s: float = 0.0
    timestamp: float = 0.0

    def payload_bytes(self) -> bytes:
        return (_pack_str(self.evse_id)
                + struct.pack(">qdd", self.energy_ws, self.interval_s,
                              self.timestamp))

    @classmethod
    def from_payload(cls, payload: bytes) -> "MeteringReceiptReq":
        evse_id, off = _unpack_str(payload, 0)
        energy, interval, ts = struct.unpack_from(">qdd", payload, off)
        return cls(evse_id=evse_id, energy_ws=energy, interval_s=interval,
                   timestamp=ts)


@dataclass(frozen=True)
class MeteringReceiptRes:
    TAG = TAG_METERING_RECEIPT_RES
    ok: bool = True

    def payload_bytes(self) -> bytes:
        return bytes([1 if self.ok else 0])

    @classmethod
    def from_payload(cls, payload: bytes) -> "MeteringReceiptRes":
        return cls(ok=bool(payload[0]))


@dataclass(frozen=True)
class SessionStopReq:
    TAG = TAG_SESSION_STOP_REQ

    def payload_bytes(self) -> bytes:
        return b""

    @classmethod
    def from_payload(cls, payload: bytes) -> "SessionStopReq":
        return cls()


@dataclass(frozen=True)
class SessionStopRes:
    TAG = TAG_SESSION_STOP_RES

    def payload_bytes(self) -> bytes:
        return b""

    @classmethod
    def from_payload(cls, payload: bytes) -> "SessionStopRes":
        return cls()


@dataclass(frozen=True)
class SecureReq:
    """Secure-channel handshake initiation; carries the client certificate
    identity and its (already PKI-verified) validity bit."""

    TAG = TAG_SECURE_REQ
    cert_id: str = ""
    valid: bool = True

    def payload_bytes(self) -> bytes:
        return _pack_str(self.cert_id) + bytes([1 if self.valid else 0])

    @classmethod
    def from_payload(cls, payload: bytes) -> "SecureReq":
        cert, off = _unpack_str(payload, 0)
        return cls(cert_id=cert, valid=bool(payload[off]))


@dataclass(frozen=True)
class SecureRes:
    TAG = TAG_SECURE_RES
    cert_id: str = ""
    valid: bool = True

    def payload_bytes(self) -> bytes:
        return _pack_str(self.cert_id) + bytes([1 if self.valid else 0])

    @classmethod
    def from_payload(cls, payload: bytes) -> "SecureRes":
        cert, off = _unpack_str(payload, 0)
        return cls(cert_id=cert, valid=bool(payload[off]))


@dataclass(frozen=True)
class SecureEnvelope:
    """Opaque carrier for messages sent after channel establishment.
    body is wrap()ed ciphertext-equivalent bytes."""

    TAG = TAG_SECURE_ENVELOPE
    body: bytes = b""

    def payload_bytes(self) -> bytes:
        return self.body

    @classmethod
    def from_payload(cls, payload: bytes) -> "SecureEnvelope":
        return cls(body=payload)


@dataclass(frozen=True)
class DbTranscript:
    """Interleaved challenge/response record sent by the supply side over
    the secure channel after the fast exchange."""

    TAG = TAG_DB_TRANSCRIPT
    symbols: bytes = b""

    def payload_bytes(self) -> bytes:
        return self.symbols

    @classmethod
    def from_payload(cls, payload: bytes) -> "DbTranscript":
        return cls(symbols=payload)


_MESSAGE_TYPES = {
    cls.TAG: cls for cls in (
        SdpRequest, SdpResponse, SessionSetupReq, SessionSetupRes,
        AuthorizationReq, AuthorizationRes, ChargeParameterReq,
        ChargeParameterRes, PowerDeliveryReq, PowerDeliveryRes,
        MeteringReceiptReq, MeteringReceiptRes, SessionStopReq,
        SessionStopRes, SecureReq, SecureRes, SecureEnvelope, DbTranscript,
    )
}

# Message pairs used by the request/response bookkeeping checks.
RESPONSE_OF = {
    TAG_SDP_REQUEST: TAG_SDP_RESPONSE,
    TAG_SESSION_SETUP_REQ: TAG_SESSION_SETUP_RES,
    TAG_AUTHORIZATION_REQ: TAG_AUTHORIZATION_RES,
    TAG_CHARGE_PARAMETER_REQ: TAG_CHARGE_PARAMETER_RES,
    TAG_POWER_DELIVERY_REQ: TAG_POWER_DELIVERY_RES,
    TAG_METERING_RECEIPT_REQ: TAG_METERING_RECEIPT_RES,
    TAG_SESSION_STOP_REQ: TAG_SESSION_STOP_RES,
}


def encode_frame(msg, session_id: int) -> bytes:
    payload = msg.payload_bytes()
    return _HEADER.pack(msg.TAG, session_id, len(payload)) + payload


def decode_frame(data: bytes):
    """Decode canonical frame bytes into (message, session_id)."""
    if len(data) < _HEADER.size:
        raise DecodeError(f"frame too short: {len(data)} bytes")
    tag, session_id, length = _HEADER.unpack_from(data, 0)
    if len(data) != _HEADER.size + length:
        raise DecodeError("frame length field does not match payload")
    cls = _MESSAGE_TYPES.get(tag)
    if cls is None:
        raise DecodeError(f"unknown message tag 0x{tag:02x}")
    try:
        msg = cls.from_payload(data[_HEADER.size:])
    except (IndexError, struct.error) as exc:
        raise DecodeError(f"bad payload for tag 0x{tag:02x}: {exc}") from exc
    return msg, session_id


def pack_fast(tag: int, index: int, symbol: int) -> bytes:
    """Encode one fast-exchange datagram."""
    return _FAST.pack(tag, index, symbol)


def unpack_fast(data: bytes) -> tuple[int, int, int]:
    """Decode a fast-exchange datagram into (tag, index, symbol)."""
    if len(data) != FAST_FRAME_LEN:
        raise DecodeError(f"fast-exchange frame must be {FAST_FRAME_LEN} bytes")
    tag, index, symbol = _FAST.unpack(data)
    if tag not in _FAST_TAGS:
        raise DecodeError(f"not a fast-exchange tag: 0x{tag:02x}")
    return tag, index, symbol


def is_fast_frame(data: bytes) -> bool:
    return len(data) == FAST_FRAME_LEN and data[0] in (TAG_DB_CHALLENGE,
                                                       TAG_DB_RESPONSE)
