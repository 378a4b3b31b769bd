"""Wire-format round trips and frozen byte vectors."""

import pytest

from evrelaysim.messages import (
    ACTION_START,
    ACTION_STOP,
    AuthorizationReq,
    AuthorizationRes,
    ChargeParameterReq,
    ChargeParameterRes,
    ChargeSchedule,
    DbTranscript,
    DecodeError,
    FAST_FRAME_LEN,
    MeteringReceiptReq,
    MeteringReceiptRes,
    PowerDeliveryReq,
    PowerDeliveryRes,
    SdpRequest,
    SdpResponse,
    SecureEnvelope,
    SecureReq,
    SecureRes,
    SessionSetupReq,
    SessionSetupRes,
    SessionStopReq,
    SessionStopRes,
    TAG_DB_CHALLENGE,
    TAG_DB_RESPONSE,
    decode_frame,
    encode_frame,
    is_fast_frame,
    pack_fast,
    unpack_fast,
)

SCHEDULE = ChargeSchedule.from_kwh(30.0, 10.0, 14400)

ALL_MESSAGES = [
    SdpRequest(),
    SdpResponse(address="SE-A", port=15118, security_level=1),
    SessionSetupReq(evcc_id="EV-A"),
    SessionSetupRes(),
    AuthorizationReq(contract_id="V-001"),
    AuthorizationRes(accepted=True),
    AuthorizationRes(accepted=False),
    ChargeParameterReq(schedule=SCHEDULE),
    ChargeParameterRes(accepted=True, schedule=SCHEDULE),
    PowerDeliveryReq(action=ACTION_START),
    PowerDeliveryReq(action=ACTION_STOP),
    PowerDeliveryRes(ok=True),
    MeteringReceiptReq(evse_id="EVSE-B", energy_ws=10_000, interval_s=1.0,
                       timestamp=17.25),
    MeteringReceiptRes(ok=True),
    SessionStopReq(),
    SessionStopRes(),
    SecureReq(cert_id="CERT-V-001", valid=True),
    SecureRes(cert_id="CERT-SE-A", valid=True),
    SecureEnvelope(body=b"\x01\x02\x03\x04"),
    DbTranscript(symbols=bytes(range(16))),
]


@pytest.mark.parametrize("msg", ALL_MESSAGES, ids=lambda m: type(m).__name__)
def test_roundtrip(msg):
    for sid in (0, 1, 0xFFFF_FFFF_FFFF_FFFF):
        data = encode_frame(msg, sid)
        decoded, got_sid = decode_frame(data)
        assert decoded == msg
        assert got_sid == sid


class TestFrozenVectors:
    """The canonical layout is stable across versions; these byte strings
    were recorded when the format was fixed and must never change."""

    def test_sdp_request(self):
        assert encode_frame(SdpRequest(), 0).hex() == \
            "01000000000000000000000000"

    def test_sdp_response(self):
        msg = SdpResponse(address="SE-A", port=15118, security_level=1)
        assert encode_frame(msg, 0).hex() == \
            "020000000000000000000000080453452d413b0e01"

    def test_authorization_req(self):
        msg = AuthorizationReq(contract_id="V-001")
        assert encode_frame(msg, 0x1122334455667788).hex() == \
            "1211223344556677880000000605562d303031"

    def test_charge_parameter_req(self):
        msg = ChargeParameterReq(schedule=SCHEDULE)
        assert encode_frame(msg, 1).hex() == \
            "1400000000000000010000001400000000066ff300000027100000000000003840"

    def test_fast_exchange_frame(self):
        assert pack_fast(TAG_DB_CHALLENGE, 3, 0x41).hex() == "400000000341"

    def test_header_shape(self):
        # 1 byte tag + 8 byte session id + 4 byte length + payload
        data = encode_frame(AuthorizationRes(accepted=True), 2)
        assert data[0] == 0x13
        assert int.from_bytes(data[1:9], "big") == 2
        assert int.from_bytes(data[9:13], "big") == len(data) - 13 == 1


class TestFastFrames:
    def test_roundtrip(self):
        data = pack_fast(TAG_DB_RESPONSE, 41, 200)
        assert len(data) == FAST_FRAME_LEN
        assert unpack_fast(data) == (TAG_DB_RESPONSE, 41, 200)

    def test_is_fast_frame(self):
        assert is_fast_frame(pack_fast(TAG_DB_CHALLENGE, 0, 0))
        assert not is_fast_frame(encode_frame(SdpRequest(), 0))
        assert not is_fast_frame(b"\x40\x00\x00")

    def test_bad_length_rejected(self):
        with pytest.raises(DecodeError):
            unpack_fast(b"\x40\x00\x00\x00\x00\x00\x00")

    def test_wrong_tag_rejected(self):
        with pytest.raises(DecodeError):
            unpack_fast(b"\x01\x00\x00\x00\x00\x00")


class TestDecodeErrors:
    def test_truncated_frame(self):
        with pytest.raises(DecodeError):
            decode_frame(b"\x01\x00")

    def test_length_mismatch(self):
        data = bytearray(encode_frame(AuthorizationRes(accepted=True), 0))
        data[12] = 99  # lie about the payload length
        with pytest.raises(DecodeError):
            decode_frame(bytes(data))

    def test_unknown_tag(self):
        data = bytearray(encode_frame(SdpRequest(), 0))
        data[0] = 0xEE
        with pytest.raises(DecodeError):
            decode_frame(bytes(data))


class TestChargeSchedule:
    def test_kwh_conversion_exact(self):
        s = ChargeSchedule.from_kwh(1.0, 10.0, 100)
        assert s.target_energy_ws == 3_600_000
        assert s.max_power_w == 10_000
        assert s.target_kwh == 1.0

    def test_discharge_flag(self):
        assert ChargeSchedule.from_kwh(-5.0, 10.0, 100).is_discharge
        assert not ChargeSchedule.from_kwh(5.0, 10.0, 100).is_discharge

    def test_power_must_be_positive(self):
        with pytest.raises(ValueError):
            ChargeSchedule(target_energy_ws=1, max_power_w=0, departure_s=0)
