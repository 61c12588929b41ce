"""Protocol message envelope and canonical serialization.

All six message kinds share one versioned envelope. The body encoding is
canonical JSON: sorted keys, compact separators, counts as plain integers,
and mask polygon coordinates rendered as decimal strings with 6 fractional
digits, so encoded frames are byte-identical across platforms and runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Union

from .errors import SchemaMismatch
from .geometry import ImageBounds, MaskPolygon
from .registration import Feature

MESSAGE_SCHEMA_VERSION = 1


class MessageKind(str, Enum):
    INIT_SIGNAL = "init_signal"
    IMAGE_SHARE = "image_share"
    COMPUTE_SIGNAL = "compute_signal"
    MASK_SHARE = "mask_share"
    ETA_REPORT = "eta_report"
    MU_REPORT = "mu_report"


@dataclass(frozen=True)
class InitSignal:
    """Sink -> node: start initialization. Node -> sink: done (ack=True),
    listing neighbors whose registration failed."""

    ack: bool = False
    failed: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImageShare:
    """A node's captured view, reduced to what registration needs."""

    bounds: ImageBounds
    features: tuple[Feature, ...] = ()


@dataclass(frozen=True)
class ComputeSignal:
    """Sink -> node: run local counting for the enclosing round."""


@dataclass(frozen=True)
class MaskShare:
    """Node -> neighbor: this round's detected masks."""

    masks: tuple[MaskPolygon, ...] = ()


@dataclass(frozen=True)
class EtaReport:
    """Node -> sink: number of vehicles detected in the node's own view."""

    eta: int

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


@dataclass(frozen=True)
class MuReport:
    """Node i -> sink: how many of node j's masks duplicate i's detections."""

    j: str
    i: str
    mu: int

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("mu must be non-negative")


Payload = Union[InitSignal, ImageShare, ComputeSignal, MaskShare, EtaReport, MuReport]

_KIND_OF_PAYLOAD = {
    InitSignal: MessageKind.INIT_SIGNAL,
    ImageShare: MessageKind.IMAGE_SHARE,
    ComputeSignal: MessageKind.COMPUTE_SIGNAL,
    MaskShare: MessageKind.MASK_SHARE,
    EtaReport: MessageKind.ETA_REPORT,
    MuReport: MessageKind.MU_REPORT,
}


@dataclass(frozen=True)
class ProtocolMessage:
    """Versioned envelope routing one payload between two actors."""

    kind: MessageKind
    src: str
    dst: str
    round: int
    payload: Payload
    version: int = MESSAGE_SCHEMA_VERSION

    def __post_init__(self) -> None:
        expected = _KIND_OF_PAYLOAD[type(self.payload)]
        if self.kind != expected:
            raise ValueError(f"payload {type(self.payload).__name__} is not a {self.kind}")

    @classmethod
    def wrap(cls, payload: Payload, src: str, dst: str, round: int) -> ProtocolMessage:
        return cls(
            kind=_KIND_OF_PAYLOAD[type(payload)], src=src, dst=dst, round=round, payload=payload
        )


def _coord(value: float) -> str:
    return f"{value:.6f}"


def _mask_to_json(mask: MaskPolygon) -> list[list[str]]:
    return [[_coord(x), _coord(y)] for x, y in mask.vertices]


def _mask_from_json(data: Any) -> MaskPolygon:
    try:
        return MaskPolygon(tuple((float(x), float(y)) for x, y in data))
    except (TypeError, ValueError) as exc:
        raise SchemaMismatch(f"bad mask polygon: {exc}") from exc


def _feature_to_json(f: Feature) -> dict[str, Any]:
    return {"loc": [f.location[0], f.location[1]], "desc": list(f.descriptor)}


def _feature_from_json(data: Any) -> Feature:
    try:
        return Feature((float(data["loc"][0]), float(data["loc"][1])), tuple(data["desc"]))
    except (TypeError, KeyError, ValueError) as exc:
        raise SchemaMismatch(f"bad feature: {exc}") from exc


def _payload_to_json(payload: Payload) -> dict[str, Any]:
    if isinstance(payload, InitSignal):
        return {"ack": payload.ack, "failed": sorted(payload.failed)}
    if isinstance(payload, ImageShare):
        return {
            "bounds": {"width": payload.bounds.width, "height": payload.bounds.height},
            "features": [_feature_to_json(f) for f in payload.features],
        }
    if isinstance(payload, ComputeSignal):
        return {}
    if isinstance(payload, MaskShare):
        return {"masks": [_mask_to_json(m) for m in payload.masks]}
    if isinstance(payload, EtaReport):
        return {"eta": payload.eta}
    if isinstance(payload, MuReport):
        return {"j": payload.j, "i": payload.i, "mu": payload.mu}
    raise TypeError(f"unknown payload {type(payload).__name__}")


def _payload_from_json(kind: MessageKind, data: Any) -> Payload:
    try:
        if kind is MessageKind.INIT_SIGNAL:
            return InitSignal(ack=bool(data["ack"]), failed=tuple(data["failed"]))
        if kind is MessageKind.IMAGE_SHARE:
            bounds = ImageBounds(float(data["bounds"]["width"]), float(data["bounds"]["height"]))
            return ImageShare(
                bounds=bounds, features=tuple(_feature_from_json(f) for f in data["features"])
            )
        if kind is MessageKind.COMPUTE_SIGNAL:
            return ComputeSignal()
        if kind is MessageKind.MASK_SHARE:
            return MaskShare(masks=tuple(_mask_from_json(m) for m in data["masks"]))
        if kind is MessageKind.ETA_REPORT:
            return EtaReport(eta=int(data["eta"]))
        if kind is MessageKind.MU_REPORT:
            return MuReport(j=str(data["j"]), i=str(data["i"]), mu=int(data["mu"]))
    except (TypeError, KeyError, ValueError) as exc:
        raise SchemaMismatch(f"malformed {kind.value} payload: {exc}") from exc
    raise SchemaMismatch(f"unknown message kind {kind!r}")


def canonical_dumps(obj: Any) -> bytes:
    """Canonical JSON bytes: sorted keys, no whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_message(msg: ProtocolMessage) -> bytes:
    return canonical_dumps(
        {
            "version": msg.version,
            "kind": msg.kind.value,
            "src": msg.src,
            "dst": msg.dst,
            "round": msg.round,
            "payload": _payload_to_json(msg.payload),
        }
    )


def decode_message(data: bytes) -> ProtocolMessage:
    """Parse one message body; the version field gates parsing."""
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"message body is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaMismatch("message body must be a JSON object")
    version = raw.get("version")
    if version != MESSAGE_SCHEMA_VERSION:
        raise SchemaMismatch(
            f"unsupported message version {version!r} (expected {MESSAGE_SCHEMA_VERSION})"
        )
    try:
        kind = MessageKind(raw["kind"])
        src, dst, round_ = str(raw["src"]), str(raw["dst"]), int(raw["round"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaMismatch(f"malformed envelope: {exc}") from exc
    return ProtocolMessage(
        kind=kind,
        src=src,
        dst=dst,
        round=round_,
        payload=_payload_from_json(kind, raw.get("payload")),
        version=version,
    )
