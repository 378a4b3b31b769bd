"""Simplified plug-and-charge session layer.

Two pure step functions drive the vehicle-side (EVCC) and supply-side
(SECC) state machines: (state, input, now) -> (new state, outgoing
messages). Inputs are either wire messages or local events (plug-in,
guard verdicts, stop requests). Illegal inputs raise ProtocolViolation
and leave the state untouched.

The secure channel is a TLS stand-in: once established, payloads are
treated as opaque and any in-flight byte modification is detected on
unwrap and terminates the session. No real cryptography is involved;
only the opacity and tamper-evidence properties matter here.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field, replace
from enum import IntEnum

from .messages import (
    ACTION_START,
    ACTION_STOP,
    AuthorizationReq,
    AuthorizationRes,
    ChargeParameterReq,
    ChargeParameterRes,
    ChargeSchedule,
    MeteringReceiptReq,
    MeteringReceiptRes,
    PowerDeliveryReq,
    PowerDeliveryRes,
    SdpRequest,
    SdpResponse,
    SessionSetupReq,
    SessionSetupRes,
    SessionStopReq,
    SessionStopRes,
)


class Phase(IntEnum):
    """Session lifecycle. Transitions never move to a lower phase."""

    UNPLUGGED = 0
    PAIRED = 1
    DISCOVERED = 2
    DISTANCE_BOUNDING = 3
    SECURED = 4
    SET_UP = 5
    AUTHORIZED = 6
    PARAMS_AGREED = 7
    CHARGING = 8
    STOPPED = 9


class ProtocolViolation(RuntimeError):
    def __init__(self, phase: Phase, inp):
        super().__init__(f"illegal input {type(inp).__name__} in phase {phase.name}")
        self.phase = phase
        self.input = inp


class InvalidCertificate(RuntimeError):
    """Peer presented an invalid credential during channel setup."""


class NotSecured(RuntimeError):
    """Operation requires an established secure channel."""


class TamperDetected(RuntimeError):
    """Opaque payload bytes were modified in flight."""


# -- local events fed to the machines ------------------------------------

@dataclass(frozen=True)
class PlugIn:
    """Cable inserted; pairing is modeled as this single atomic event."""


@dataclass(frozen=True)
class GuardStart:
    """Distance-bounding phase begins on this session."""


@dataclass(frozen=True)
class GuardVerdict:
    outcome: str  # Accept, TimingAlert, IntegrityAlert, Timeout

    @property
    def accepted(self) -> bool:
        return self.outcome == "Accept"


@dataclass(frozen=True)
class ChannelEstablished:
    """Secure channel came up (used when no guard runs on the session)."""


@dataclass(frozen=True)
class StopRequested:
    """User asked to end the charge."""


@dataclass(frozen=True)
class SessionAbort:
    reason: str = ""


@dataclass(frozen=True)
class SetupWithId:
    """SECC-side wrapper: a SessionSetupReq plus the id assigned to it."""

    request: SessionSetupReq
    session_id: int


@dataclass(frozen=True)
class AuthDecision:
    """SECC-side wrapper: an AuthorizationReq plus the validation result."""

    request: AuthorizationReq
    accepted: bool


# -- credentials & secure channel -----------------------------------------

@dataclass(frozen=True)
class Certificate:
    certificate_id: str
    valid: bool = True


@dataclass(frozen=True)
class ContractCredential:
    """Contract certificate installed in the vehicle; drives automatic
    authorization and billing."""

    contract_id: str
    certificate_id: str
    valid: bool = True


@dataclass
class SecureChannel:
    established: bool
    ev_cert: str
    se_cert: str
    key: bytes

    def wrap(self, data: bytes) -> bytes:
        """Attach a keyed integrity check. The relay threat model forwards
        bytes verbatim, so any mutation shows up on unwrap."""
        mac = zlib.crc32(self.key + data) & 0xFFFFFFFF
        return data + mac.to_bytes(4, "big")

    def unwrap(self, data: bytes) -> bytes:
        if len(data) < 4:
            raise TamperDetected("opaque payload truncated")
        body, mac = data[:-4], int.from_bytes(data[-4:], "big")
        if (zlib.crc32(self.key + body) & 0xFFFFFFFF) != mac:
            raise TamperDetected("opaque payload modified in flight")
        return body


def establish_secure_channel(ev_cred: ContractCredential,
                             se_cert: Certificate) -> SecureChannel:
    """Mutually authenticate and derive the channel. Both endpoints run
    this with the same certificate identities and obtain the same key."""
    if not ev_cred.valid:
        raise InvalidCertificate(f"EV credential {ev_cred.certificate_id} invalid")
    if not se_cert.valid:
        raise InvalidCertificate(f"station certificate {se_cert.certificate_id} invalid")
    material = f"{ev_cred.certificate_id}|{se_cert.certificate_id}".encode()
    key = hashlib.sha256(material).digest()[:8]
    return SecureChannel(established=True, ev_cert=ev_cred.certificate_id,
                         se_cert=se_cert.certificate_id, key=key)


def authorize(channel: SecureChannel | None, control_center, session_id: int,
              request: AuthorizationReq) -> AuthorizationRes:
    """Plug-and-charge authorization: accept iff the contract is valid, and
    bind the session to the contract for billing."""
    if channel is None or not channel.established:
        raise NotSecured("authorization before secure channel establishment")
    accepted = control_center.validate(request.contract_id)
    if accepted:
        control_center.bind(session_id, request.contract_id)
    return AuthorizationRes(accepted=accepted)


# -- session state ---------------------------------------------------------

@dataclass(frozen=True)
class SessionState:
    """Shared shape for both controllers; each side uses its own subset
    of the optional fields."""

    phase: Phase = Phase.UNPLUGGED
    session_id: int = 0
    peer_address: str = ""
    schedule: ChargeSchedule | None = None
    # EVCC side
    evcc_id: str = ""
    contract_id: str = ""
    desired_schedule: ChargeSchedule | None = None
    pending_delivery: int | None = None
    # SECC side
    station_address: str = ""
    station_max_power_w: int = 0
    bidirectional: bool = False


def _clamp_schedule(req: ChargeSchedule, state: SessionState) -> ChargeSchedule | None:
    """Echo-accept policy: grant the request, capped at station power.
    Discharge is refused unless the station supports bidirectional flow."""
    if req.is_discharge and not state.bidirectional:
        return None
    power = min(req.max_power_w, state.station_max_power_w)
    if power <= 0:
        return None
    if power == req.max_power_w:
        return req
    return replace(req, max_power_w=power)


def evcc_step(state: SessionState, inp, now: float):
    """Vehicle-side transition. Returns (state, [messages to send])."""
    ph = state.phase

    if isinstance(inp, SessionAbort):
        return replace(state, phase=Phase.STOPPED), []

    if isinstance(inp, PlugIn) and ph == Phase.UNPLUGGED:
        return replace(state, phase=Phase.PAIRED), [SdpRequest()]

    if isinstance(inp, SdpResponse) and ph == Phase.PAIRED:
        return replace(state, phase=Phase.DISCOVERED,
                       peer_address=inp.address), []

    if isinstance(inp, GuardStart) and ph == Phase.DISCOVERED:
        return replace(state, phase=Phase.DISTANCE_BOUNDING), []

    if isinstance(inp, GuardVerdict) and ph in (Phase.DISCOVERED,
                                                Phase.DISTANCE_BOUNDING):
        if inp.accepted:
            return (replace(state, phase=Phase.SECURED),
                    [SessionSetupReq(evcc_id=state.evcc_id)])
        return replace(state, phase=Phase.STOPPED), []

    if isinstance(inp, ChannelEstablished) and ph == Phase.DISCOVERED:
        return (replace(state, phase=Phase.SECURED),
                [SessionSetupReq(evcc_id=state.evcc_id)])

    if isinstance(inp, SessionSetupRes) and ph == Phase.SECURED:
        # The assigned id arrives in the frame header; the node layer stores
        # it on the state before stepping, so here we only advance.
        return (replace(state, phase=Phase.SET_UP),
                [AuthorizationReq(contract_id=state.contract_id)])

    if isinstance(inp, AuthorizationRes) and ph == Phase.SET_UP:
        if inp.accepted:
            return (replace(state, phase=Phase.AUTHORIZED),
                    [ChargeParameterReq(schedule=state.desired_schedule)])
        return replace(state, phase=Phase.STOPPED), []

    if isinstance(inp, ChargeParameterRes) and ph == Phase.AUTHORIZED:
        if inp.accepted:
            return (replace(state, phase=Phase.PARAMS_AGREED,
                            schedule=inp.schedule,
                            pending_delivery=ACTION_START),
                    [PowerDeliveryReq(action=ACTION_START)])
        return replace(state, phase=Phase.STOPPED), []

    if isinstance(inp, PowerDeliveryRes) and ph == Phase.PARAMS_AGREED \
            and state.pending_delivery == ACTION_START:
        return replace(state, phase=Phase.CHARGING, pending_delivery=None), []

    if isinstance(inp, StopRequested) and ph == Phase.CHARGING:
        return (replace(state, pending_delivery=ACTION_STOP),
                [PowerDeliveryReq(action=ACTION_STOP)])

    if isinstance(inp, PowerDeliveryRes) and ph == Phase.CHARGING \
            and state.pending_delivery == ACTION_STOP:
        return (replace(state, phase=Phase.STOPPED, pending_delivery=None),
                [SessionStopReq()])

    if isinstance(inp, MeteringReceiptReq) and ph == Phase.CHARGING:
        return state, [MeteringReceiptRes(ok=True)]

    if isinstance(inp, SessionStopRes) and ph == Phase.STOPPED:
        return state, []

    raise ProtocolViolation(ph, inp)


def secc_step(state: SessionState, inp, now: float):
    """Supply-side transition. Returns (state, [messages to send])."""
    ph = state.phase

    if isinstance(inp, SessionAbort):
        return replace(state, phase=Phase.STOPPED), []

    if isinstance(inp, PlugIn) and ph == Phase.UNPLUGGED:
        return replace(state, phase=Phase.PAIRED), []

    if isinstance(inp, SdpRequest) and ph == Phase.PAIRED:
        return (replace(state, phase=Phase.DISCOVERED),
                [SdpResponse(address=state.station_address, port=15118,
                             security_level=1)])

    if isinstance(inp, GuardStart) and ph == Phase.DISCOVERED:
        return replace(state, phase=Phase.DISTANCE_BOUNDING), []

    if isinstance(inp, ChannelEstablished) and ph in (Phase.DISCOVERED,
                                                      Phase.DISTANCE_BOUNDING):
        return replace(state, phase=Phase.SECURED), []

    if isinstance(inp, SetupWithId) and ph == Phase.SECURED:
        return (replace(state, phase=Phase.SET_UP,
                        session_id=inp.session_id),
                [SessionSetupRes()])

    if isinstance(inp, AuthDecision) and ph == Phase.SET_UP:
        if inp.accepted:
            return (replace(state, phase=Phase.AUTHORIZED),
                    [AuthorizationRes(accepted=True)])
        return (replace(state, phase=Phase.STOPPED),
                [AuthorizationRes(accepted=False)])

    if isinstance(inp, ChargeParameterReq) and ph == Phase.AUTHORIZED:
        granted = _clamp_schedule(inp.schedule, state)
        if granted is None:
            return (replace(state, phase=Phase.STOPPED),
                    [ChargeParameterRes(accepted=False, schedule=inp.schedule)])
        return (replace(state, phase=Phase.PARAMS_AGREED, schedule=granted),
                [ChargeParameterRes(accepted=True, schedule=granted)])

    if isinstance(inp, PowerDeliveryReq) and inp.action == ACTION_START \
            and ph == Phase.PARAMS_AGREED:
        return replace(state, phase=Phase.CHARGING), [PowerDeliveryRes(ok=True)]

    if isinstance(inp, PowerDeliveryReq) and inp.action == ACTION_STOP \
            and ph in (Phase.PARAMS_AGREED, Phase.CHARGING, Phase.STOPPED):
        # A stop for a delivery that never started is acknowledged and the
        # session simply ends.
        return replace(state, phase=Phase.STOPPED), [PowerDeliveryRes(ok=True)]

    if isinstance(inp, MeteringReceiptRes) and ph == Phase.CHARGING:
        return state, []

    if isinstance(inp, SessionStopReq) and ph == Phase.STOPPED:
        return state, [SessionStopRes()]

    raise ProtocolViolation(ph, inp)
