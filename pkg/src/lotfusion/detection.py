"""Per-node vehicle detection.

The real system runs a segmentation CNN on each camera; here detection is
pluggable and ships with a ground-truth-driven synthetic detector whose
noise model (misses, false positives, vertex jitter) is parameterized and
fully reproducible: the random stream is derived from
(seed, camera id, round) with a stable 64-bit mix, so identical inputs give
identical detections on any platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geometry import ImageBounds, MaskPolygon, convex_hull, polygon_area, project_mask
from .registration import Feature

MIN_DETECTION_AREA_PX2 = 1.0

# False positives are car-scale quads relative to the frame.
_FP_SIDE_FRACTION = (0.03, 0.08)


@dataclass(frozen=True)
class Observation:
    """What one camera sees in one round.

    ``visible_truth`` pairs a stable vehicle id with its ground-truth mask;
    every truth mask overlaps the image (positive inside fraction).
    ``landmark_features`` feed registration, not counting.
    """

    camera_id: str
    bounds: ImageBounds
    visible_truth: tuple[tuple[int, MaskPolygon], ...]
    landmark_features: tuple[Feature, ...] = ()

    def __post_init__(self) -> None:
        from .geometry import Homography

        identity = Homography.identity()
        for vid, mask in self.visible_truth:
            _, frac = project_mask(identity, mask, self.bounds)
            if frac <= 0.0:
                raise ValueError(f"truth mask {vid} lies fully outside the image")


@dataclass(frozen=True)
class DetectorNoise:
    """Detector imperfection model.

    p_miss: per-mask drop probability; fp_rate: expected spurious
    detections per observation (Poisson); jitter_sigma: Gaussian vertex
    perturbation in pixels.
    """

    p_miss: float = 0.0
    fp_rate: float = 0.0
    jitter_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_miss <= 1.0):
            raise ValueError("p_miss must be in [0, 1]")
        if self.fp_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("fp_rate and jitter_sigma must be non-negative")


def derive_seed(seed: int, camera_id: str, round_index: int) -> int:
    """Stable 64-bit stream seed for one (camera, round).

    blake2b over the decimal rendering of the inputs, truncated to 8 bytes;
    identical across platforms and Python versions.
    """
    payload = f"{seed}|{camera_id}|{round_index}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def detect(
    obs: Observation, noise: DetectorNoise, round_index: int = 0
) -> tuple[MaskPolygon, ...]:
    """Synthetic detections for one observation.

    Each truth mask is dropped independently with probability p_miss;
    survivors get i.i.d. Gaussian vertex jitter followed by convex-hull
    repair (sub-1 px^2 results discarded); Poisson(fp_rate) spurious
    car-sized quads land uniformly in the image. With all-zero noise the
    output equals the truth masks exactly.
    """
    rng = np.random.default_rng(derive_seed(noise.rng_seed, obs.camera_id, round_index))
    detections: list[MaskPolygon] = []
    for _, mask in obs.visible_truth:
        if rng.random() < noise.p_miss:
            continue
        if noise.jitter_sigma > 0.0:
            verts = np.asarray(mask.vertices)
            verts = verts + rng.normal(0.0, noise.jitter_sigma, verts.shape)
            hull = convex_hull(verts)
            if len(hull) < 3 or polygon_area(hull) < MIN_DETECTION_AREA_PX2:
                continue
            mask = MaskPolygon(hull)
        detections.append(mask)

    for _ in range(int(rng.poisson(noise.fp_rate))):
        w = rng.uniform(*_FP_SIDE_FRACTION) * obs.bounds.width
        h = rng.uniform(*_FP_SIDE_FRACTION) * obs.bounds.height
        cx = rng.uniform(0.0, obs.bounds.width)
        cy = rng.uniform(0.0, obs.bounds.height)
        detections.append(
            MaskPolygon.rectangle(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
        )
    return tuple(detections)


class Detector(Protocol):
    """Anything that turns an observation into masks for a given round."""

    def __call__(self, obs: Observation, round_index: int) -> tuple[MaskPolygon, ...]: ...


@dataclass(frozen=True)
class SyntheticDetector:
    """The default pluggable detector: ground truth filtered through noise."""

    noise: DetectorNoise = field(default_factory=DetectorNoise)

    def __call__(self, obs: Observation, round_index: int) -> tuple[MaskPolygon, ...]:
        return detect(obs, self.noise, round_index)


@dataclass(frozen=True)
class ScriptedDetector:
    """Test/diagnostic detector returning pre-chosen masks per (camera, round).

    Falls back to the observation's truth masks when no script entry exists.
    """

    script: dict[tuple[str, int], tuple[MaskPolygon, ...]]

    def __call__(self, obs: Observation, round_index: int) -> tuple[MaskPolygon, ...]:
        key = (obs.camera_id, round_index)
        if key in self.script:
            return self.script[key]
        return tuple(mask for _, mask in obs.visible_truth)

