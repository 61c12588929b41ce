"""Distributed counting protocol: pure per-node and sink-side operations.

A node detects vehicles in its own view (eta), receives its neighbors'
masks, projects them into its own plane through the initialization-time
homography, and counts how many duplicate something it already detected
(mu). The sink aggregates the two orientations of each pair's mu and forms
the global count as sum(eta) - sum(aggregated mu).

The message-driven actors that drive these operations over a transport
live in :mod:`lotfusion.runner`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .detection import Detector, Observation
from .errors import (
    DegenerateProjection,
    IncompleteRound,
    MissingOrientation,
    NotInitialized,
    PointAtInfinity,
    RegistrationFailed,
    SchemaMismatch,
)
from .geometry import Homography, ImageBounds, MaskPolygon, iou, project_mask
from .messages import ImageShare, canonical_dumps
from .registration import Feature, RegistrationConfig, compute_pairwise_homography

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_IOU_THRESHOLD = 0.2
DEFAULT_INSIDE_THRESHOLD = 0.5

AGGREGATIONS = {
    "min": lambda a, b: float(min(a, b)),
    "max": lambda a, b: float(max(a, b)),
    "mean": lambda a, b: (a + b) / 2.0,
}


class Phase(Enum):
    IDLE = "idle"
    INITIALIZED = "initialized"
    COUNTING = "counting"


@dataclass
class NodeState:
    """One camera node's protocol state."""

    node_id: str
    neighbors: tuple[str, ...]
    bounds: ImageBounds
    homographies: dict[str, Homography] = field(default_factory=dict)
    failed: tuple[str, ...] = ()
    phase: Phase = Phase.IDLE

    def __post_init__(self) -> None:
        unknown = set(self.homographies) - set(self.neighbors)
        if unknown:
            raise ValueError(f"homographies for non-neighbors: {sorted(unknown)}")


def node_initialize(
    state: NodeState,
    own_features: tuple[Feature, ...],
    shares: Mapping[str, ImageShare],
    cfg: RegistrationConfig = RegistrationConfig(),
    manual: Mapping[str, Homography] | None = None,
) -> NodeState:
    """Register every neighbor from exchanged image shares.

    Produces the initialized state holding one plane-(neighbor)-to-own-plane
    homography per neighbor. A failed registration is non-fatal: the pair
    lands in ``failed`` (excluded from overlap accounting) unless a manual
    homography was supplied for it.
    """
    if state.phase is not Phase.IDLE:
        raise ValueError(f"{state.node_id} is already initialized")
    missing = set(state.neighbors) - set(shares)
    if missing:
        raise ValueError(f"missing image shares from {sorted(missing)}")
    manual = manual or {}
    homographies: dict[str, Homography] = {}
    failed: list[str] = []
    for j in sorted(state.neighbors):
        try:
            homographies[j] = compute_pairwise_homography(own_features, shares[j].features, cfg)
        except RegistrationFailed as exc:
            if j in manual:
                log.info("%s: using manual homography for %s", state.node_id, j)
                homographies[j] = manual[j]
            else:
                log.warning("%s: registration with %s failed: %s", state.node_id, j, exc)
                failed.append(j)
    return NodeState(
        node_id=state.node_id,
        neighbors=state.neighbors,
        bounds=state.bounds,
        homographies=homographies,
        failed=tuple(failed),
        phase=Phase.INITIALIZED,
    )


def compute_mu(
    masks_i: tuple[MaskPolygon, ...],
    masks_j: tuple[MaskPolygon, ...],
    h_ji: Homography,
    tau: float = DEFAULT_IOU_THRESHOLD,
    bounds: ImageBounds | None = None,
    inside_threshold: float = DEFAULT_INSIDE_THRESHOLD,
) -> int:
    """How many of j's masks duplicate something i already detected.

    Each of j's masks is projected into i's plane; it counts when at least
    ``inside_threshold`` of its projected area falls inside i's image and
    its best-IoU partner among i's masks (ties to the lowest index) exceeds
    ``tau``. A mask whose projection degenerates contributes nothing.

    The loop is per j-mask: each matches at most its single best partner,
    but several j-masks may match the same i-mask, which can overcount in
    tight clusters. That is deliberate and documented, not corrected.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must be in (0, 1)")
    if bounds is None:
        raise ValueError("compute_mu needs the target image bounds")
    already_detected = 0
    for mask in masks_j:
        try:
            projected, inside_fraction = project_mask(h_ji, mask, bounds)
        except (DegenerateProjection, PointAtInfinity) as exc:
            log.debug("mu: skipping unprojectable mask: %s", exc)
            continue
        if inside_fraction < inside_threshold:
            continue
        best = 0.0
        for candidate in masks_i:  # strict '>' keeps the lowest-index argmax
            value = iou(projected, candidate)
            if value > best:
                best = value
        if best > tau:
            already_detected += 1
    return already_detected


def node_local_count(
    state: NodeState,
    obs: Observation,
    neighbor_masks: Mapping[str, tuple[MaskPolygon, ...]],
    tau: float = DEFAULT_IOU_THRESHOLD,
    detector: Detector | None = None,
    round_index: int = 0,
    inside_threshold: float = DEFAULT_INSIDE_THRESHOLD,
) -> tuple[int, dict[str, int]]:
    """One node's local counting step, batched.

    Detects in its own observation, then computes mu against every
    neighbor with a valid homography. Requires an initialized node.
    """
    if state.phase is not Phase.INITIALIZED:
        raise NotInitialized(f"{state.node_id} has not completed initialization")
    if detector is None:
        raise ValueError("node_local_count needs a detector")
    masks_i = detector(obs, round_index)
    mus: dict[str, int] = {}
    for j in sorted(neighbor_masks):
        h = state.homographies.get(j)
        if h is None:
            continue
        mus[j] = compute_mu(
            masks_i, neighbor_masks[j], h, tau, state.bounds, inside_threshold
        )
    return len(masks_i), mus


def sink_aggregate(
    mu_ij: int | None, mu_ji: int | None, aggregation: str = "mean"
) -> float:
    """Combine the two orientations of one pair's overlap count.

    With only one orientation present (the other timed out or failed) the
    aggregate degrades to the single value, whatever the function.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if mu_ij is None and mu_ji is None:
        raise MissingOrientation("neither orientation of the pair was reported")
    if mu_ij is None:
        return float(mu_ji)  # type: ignore[arg-type]
    if mu_ji is None:
        return float(mu_ij)
    return AGGREGATIONS[aggregation](mu_ij, mu_ji)


def round_half_away_from_zero(value: float) -> int:
    if value >= 0:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))


def sink_global_count(
    etas: Mapping[str, int], mu_bars: list[float] | tuple[float, ...]
) -> tuple[float, int]:
    """Global estimate: sum of per-node counts minus aggregated overlaps.

    Returns the real-valued count (mean aggregation can be half-integer)
    and its half-away-from-zero rounding.
    """
    if not etas:
        raise IncompleteRound("no per-node counts")
    value = float(sum(etas.values())) - float(sum(mu_bars))
    return value, round_half_away_from_zero(value)


# --- round report ---------------------------------------------------------------


@dataclass(frozen=True)
class PairRecord:
    """Resolved overlap accounting for one unordered camera pair (a < b).

    mu_ab is the count computed by b over a's masks; mu_ba the reverse.
    """

    a: str
    b: str
    mu_ab: int | None
    mu_ba: int | None
    mu_bar: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class CountReport:
    """Everything the sink knows at the end of one round."""

    round: int
    etas: dict[str, int]
    pairs: tuple[PairRecord, ...]
    aggregation: str
    global_count: float
    rounded_count: int
    ground_truth: int | None = None
    complete: bool = True
    failed_pairs: tuple[tuple[str, str], ...] = ()
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "round": self.round,
            "aggregation": self.aggregation,
            "etas": {k: self.etas[k] for k in sorted(self.etas)},
            "pairs": [
                {
                    "pair": [p.a, p.b],
                    "mu_ab": p.mu_ab,
                    "mu_ba": p.mu_ba,
                    "mu_bar": p.mu_bar,
                    "flags": sorted(p.flags),
                }
                for p in sorted(self.pairs, key=lambda p: (p.a, p.b))
            ],
            "global_count": self.global_count,
            "rounded_count": self.rounded_count,
            "ground_truth": self.ground_truth,
            "complete": self.complete,
            "failed_pairs": [list(p) for p in sorted(self.failed_pairs)],
        }

    def encode(self) -> bytes:
        return canonical_dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, raw: Mapping[str, Any]) -> CountReport:
        try:
            if raw["schema_version"] != REPORT_SCHEMA_VERSION:
                raise SchemaMismatch(
                    f"unsupported report version {raw['schema_version']!r}"
                )
            pairs = tuple(
                PairRecord(
                    a=p["pair"][0],
                    b=p["pair"][1],
                    mu_ab=p["mu_ab"],
                    mu_ba=p["mu_ba"],
                    mu_bar=float(p["mu_bar"]),
                    flags=tuple(p["flags"]),
                )
                for p in raw["pairs"]
            )
            return cls(
                round=int(raw["round"]),
                etas={str(k): int(v) for k, v in raw["etas"].items()},
                pairs=pairs,
                aggregation=str(raw["aggregation"]),
                global_count=float(raw["global_count"]),
                rounded_count=int(raw["rounded_count"]),
                ground_truth=None if raw["ground_truth"] is None else int(raw["ground_truth"]),
                complete=bool(raw["complete"]),
                failed_pairs=tuple((p[0], p[1]) for p in raw["failed_pairs"]),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SchemaMismatch(f"malformed count report: {exc}") from exc
