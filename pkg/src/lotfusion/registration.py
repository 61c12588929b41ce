"""Pairwise camera registration.

Matches feature descriptors between two views (exhaustive nearest-neighbor
search), filters candidates by the nearest/second-nearest ratio test and an
absolute distance cap, then fits the inter-view homography robustly. Feature
extraction is not part of this module: any provider that yields
:class:`Feature` values (e.g. the synthetic scenario landmarks) plugs in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientConsensus,
    RegistrationFailed,
    TooFewFeatures,
)
from .geometry import Correspondence, Homography, Point, RansacParams, estimate_ransac

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Feature:
    """An image keypoint with a fixed-length descriptor vector."""

    location: Point
    descriptor: tuple[float, ...]

    def __post_init__(self) -> None:
        loc = (float(self.location[0]), float(self.location[1]))
        desc = tuple(float(v) for v in self.descriptor)
        if not all(np.isfinite(loc)) or not all(np.isfinite(desc)):
            raise ValueError("feature location and descriptor must be finite")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "descriptor", desc)


@dataclass(frozen=True)
class MatchCandidate:
    """One tentative match with its two nearest-neighbor distances."""

    src_index: int
    dst_index: int
    d1: float
    d2: float

    def __post_init__(self) -> None:
        if self.d1 < 0 or self.d1 > self.d2:
            raise ValueError("match candidate needs 0 <= d1 <= d2")


@dataclass(frozen=True)
class RegistrationConfig:
    """Pipeline parameters.

    ``max_distance=None`` means 0.7 times the descriptor-space diameter of
    the two sets combined, computed per pair.
    """

    ratio: float = 0.75
    max_distance: float | None = None
    ransac: RansacParams = field(default_factory=RansacParams)

    def __post_init__(self) -> None:
        if not (0.0 < self.ratio < 1.0):
            raise ValueError("ratio must be in (0, 1)")
        if self.max_distance is not None and self.max_distance <= 0:
            raise ValueError("max_distance must be positive")


def _descriptor_matrix(features: list[Feature] | tuple[Feature, ...]) -> np.ndarray:
    dims = {len(f.descriptor) for f in features}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed descriptor dimensions {sorted(dims)}")
    return np.array([f.descriptor for f in features], dtype=float)


def match_descriptors(
    a: list[Feature] | tuple[Feature, ...], b: list[Feature] | tuple[Feature, ...]
) -> list[MatchCandidate]:
    """Two nearest neighbors in ``b`` for each feature of ``a``.

    Exhaustive Euclidean search; ties broken by lower index in ``b``.
    """
    if not a:
        raise TooFewFeatures("empty query feature set")
    if len(b) < 2:
        raise TooFewFeatures("need at least 2 target features for a second neighbor")
    da = _descriptor_matrix(a)
    db = _descriptor_matrix(b)
    if da.shape[1] != db.shape[1]:
        raise DimensionMismatch(
            f"descriptor dimensions differ: {da.shape[1]} vs {db.shape[1]}"
        )
    # |x - y|^2 expanded; tiny negatives from cancellation clipped.
    sq = np.maximum(
        (da * da).sum(axis=1)[:, None] - 2.0 * (da @ db.T) + (db * db).sum(axis=1)[None, :],
        0.0,
    )
    order = np.argsort(sq, axis=1, kind="stable")
    out = []
    for i in range(len(a)):
        j1, j2 = int(order[i, 0]), int(order[i, 1])
        out.append(
            MatchCandidate(
                src_index=i,
                dst_index=j1,
                d1=float(np.sqrt(sq[i, j1])),
                d2=float(np.sqrt(sq[i, j2])),
            )
        )
    return out


def ratio_filter(matches: list[MatchCandidate], ratio: float = 0.75) -> list[MatchCandidate]:
    """Keep candidates whose best distance clearly beats the runner-up.

    A candidate passes when d1 < ratio * d2; exact duplicates (d2 = 0,
    which forces d1 = 0) are kept.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must be in (0, 1)")
    kept = []
    for m in matches:
        if m.d2 == 0.0:
            if m.d1 == 0.0:
                kept.append(m)
        elif m.d1 < ratio * m.d2:
            kept.append(m)
    return kept


def distance_filter(
    matches: list[MatchCandidate], max_distance: float
) -> list[MatchCandidate]:
    """Keep candidates with d1 strictly below the absolute cap."""
    if max_distance <= 0:
        raise ValueError("max_distance must be positive")
    return [m for m in matches if m.d1 < max_distance]


def descriptor_diameter(
    a: list[Feature] | tuple[Feature, ...], b: list[Feature] | tuple[Feature, ...]
) -> float:
    """Largest pairwise descriptor distance over both sets combined."""
    da = np.vstack([_descriptor_matrix(a), _descriptor_matrix(b)])
    sq = (da * da).sum(axis=1)[:, None] - 2.0 * (da @ da.T) + (da * da).sum(axis=1)[None, :]
    return float(np.sqrt(max(float(sq.max()), 0.0)))


def compute_pairwise_homography(
    features_i: list[Feature] | tuple[Feature, ...],
    features_j: list[Feature] | tuple[Feature, ...],
    cfg: RegistrationConfig = RegistrationConfig(),
) -> Homography:
    """Full matching pipeline for one camera pair.

    Returns the homography taking plane-j coordinates to plane-i
    coordinates. Raises RegistrationFailed (wrapping the underlying cause)
    when the pair cannot be registered automatically; the caller decides
    whether to exclude the pair or substitute a manual homography.
    """
    try:
        matches = match_descriptors(features_j, features_i)
        matches = ratio_filter(matches, cfg.ratio)
        cap = cfg.max_distance
        if cap is None:
            diameter = descriptor_diameter(features_j, features_i)
            cap = 0.7 * diameter if diameter > 0 else 1.0
        matches = distance_filter(matches, cap)
        if len(matches) < 4:
            raise TooFewFeatures(f"only {len(matches)} matches survived filtering")
        correspondences = [
            Correspondence(features_j[m.src_index].location, features_i[m.dst_index].location)
            for m in matches
        ]
        homography, inliers = estimate_ransac(correspondences, cfg.ransac)
    except (TooFewFeatures, InsufficientConsensus, DimensionMismatch) as exc:
        raise RegistrationFailed(f"pair registration failed: {exc}") from exc
    log.debug(
        "registered pair with %d/%d consensus matches", len(inliers), len(correspondences)
    )
    return homography
