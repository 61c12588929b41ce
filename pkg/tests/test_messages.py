import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotfusion.errors import SchemaMismatch
from lotfusion.geometry import ImageBounds, MaskPolygon
from lotfusion.messages import (
    MESSAGE_SCHEMA_VERSION,
    ComputeSignal,
    EtaReport,
    ImageShare,
    InitSignal,
    MaskShare,
    MessageKind,
    MuReport,
    ProtocolMessage,
    decode_message,
    encode_message,
)
from lotfusion.registration import Feature

node_ids = st.sampled_from(["cam1", "cam2", "cam3", "sink"])
rounds = st.integers(min_value=0, max_value=10_000)

# Wire-grid coordinates: multiples of 1e-3 survive the 6-fractional-digit
# canonical rendering exactly.
grid_coord = st.integers(min_value=-5_000_000, max_value=5_000_000).map(lambda n: n / 1e3)
finite_float = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def quantized_rect(draw):
    # Corners computed in integer milli-units so every coordinate lands
    # exactly on the wire grid.
    nx0 = draw(st.integers(min_value=-5_000_000, max_value=5_000_000))
    ny0 = draw(st.integers(min_value=-5_000_000, max_value=5_000_000))
    nw = draw(st.integers(min_value=1, max_value=500_000))
    nh = draw(st.integers(min_value=1, max_value=500_000))
    return MaskPolygon.rectangle(nx0 / 1e3, ny0 / 1e3, (nx0 + nw) / 1e3, (ny0 + nh) / 1e3)


@st.composite
def features(draw):
    loc = (draw(finite_float), draw(finite_float))
    desc = tuple(draw(st.lists(finite_float, min_size=1, max_size=8)))
    return Feature(loc, desc)


@st.composite
def payloads(draw):
    choice = draw(st.integers(0, 5))
    if choice == 0:
        return InitSignal(
            ack=draw(st.booleans()),
            failed=tuple(sorted(draw(st.sets(node_ids, max_size=3)))),
        )
    if choice == 1:
        return ImageShare(
            bounds=ImageBounds(float(draw(st.integers(1, 4000))), float(draw(st.integers(1, 4000)))),
            features=tuple(draw(st.lists(features(), max_size=5))),
        )
    if choice == 2:
        return ComputeSignal()
    if choice == 3:
        return MaskShare(masks=tuple(draw(st.lists(quantized_rect(), max_size=5))))
    if choice == 4:
        return EtaReport(eta=draw(st.integers(0, 500)))
    return MuReport(j=draw(node_ids), i=draw(node_ids), mu=draw(st.integers(0, 500)))


@st.composite
def protocol_messages(draw):
    return ProtocolMessage.wrap(
        draw(payloads()), src=draw(node_ids), dst=draw(node_ids), round=draw(rounds)
    )


class TestRoundTrip:
    @settings(max_examples=300, deadline=None)
    @given(protocol_messages())
    def test_decode_inverts_encode(self, msg):
        assert decode_message(encode_message(msg)) == msg

    def test_one_example_per_kind(self):
        examples = [
            InitSignal(),
            InitSignal(ack=True, failed=("cam2",)),
            ImageShare(bounds=ImageBounds(640.0, 480.0), features=(Feature((1.5, 2.25), (0.125,)),)),
            ComputeSignal(),
            MaskShare(masks=(MaskPolygon.rectangle(0.0, 0.0, 10.0, 5.5),)),
            EtaReport(eta=7),
            MuReport(j="cam1", i="cam2", mu=3),
        ]
        for payload in examples:
            msg = ProtocolMessage.wrap(payload, src="cam1", dst="sink", round=2)
            assert decode_message(encode_message(msg)) == msg

    def test_encoding_is_canonical(self):
        msg = ProtocolMessage.wrap(EtaReport(eta=4), src="cam1", dst="sink", round=1)
        data = encode_message(msg)
        assert data == encode_message(msg)
        assert b" " not in data
        assert data == (
            b'{"dst":"sink","kind":"eta_report","payload":{"eta":4},'
            b'"round":1,"src":"cam1","version":1}'
        )

    def test_mask_coordinates_use_fixed_decimals(self):
        mask = MaskPolygon.rectangle(0.0, 0.0, 1.0, 1.0)
        msg = ProtocolMessage.wrap(MaskShare((mask,)), src="a", dst="b", round=0)
        assert b'"0.000000"' in encode_message(msg)


class TestVersionGate:
    def test_unsupported_version_rejected(self):
        msg = ProtocolMessage.wrap(EtaReport(eta=1), src="a", dst="b", round=0)
        tampered = encode_message(msg).replace(
            b'"version":1', b'"version":%d' % (MESSAGE_SCHEMA_VERSION + 1)
        )
        with pytest.raises(SchemaMismatch):
            decode_message(tampered)

    def test_garbage_rejected(self):
        with pytest.raises(SchemaMismatch):
            decode_message(b"\xff\x00 not json")
        with pytest.raises(SchemaMismatch):
            decode_message(b'["not", "an", "object"]')

    def test_malformed_payload_rejected(self):
        msg = ProtocolMessage.wrap(EtaReport(eta=1), src="a", dst="b", round=0)
        broken = encode_message(msg).replace(b'{"eta":1}', b'{"oops":1}')
        with pytest.raises(SchemaMismatch):
            decode_message(broken)


class TestEnvelope:
    def test_kind_payload_consistency_enforced(self):
        with pytest.raises(ValueError):
            ProtocolMessage(
                kind=MessageKind.ETA_REPORT, src="a", dst="b", round=0, payload=ComputeSignal()
            )

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            EtaReport(eta=-1)
        with pytest.raises(ValueError):
            MuReport(j="a", i="b", mu=-2)
