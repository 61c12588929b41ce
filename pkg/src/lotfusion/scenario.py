"""Synthetic parking world: the ground-truth generator.

A world is a planar lot of rectangular parking spaces (meters), a set of
cameras modeled purely as ground-plane-to-image homographies, and a field
of landmark points with unique descriptors that feed registration.
Vehicles are the occupied-space quads (slightly overhanging the painted
lines, like real cars), so every protocol quantity (per-camera counts,
pairwise overlaps, the true global count) is exact and recomputable.

Cameras in the built-in layouts form a chain: each one watches a ground
trapezoid (wider at the far edge, like a real tilted camera) overlapping
only its immediate neighbors, unless a layout deliberately creates a
three-way overlap for the pairwise-subtraction diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .detection import DetectorNoise, Observation, derive_seed
from .errors import DegenerateProjection, InfeasibleConfig, PointAtInfinity
from .geometry import (
    Correspondence,
    Homography,
    ImageBounds,
    MaskPolygon,
    Point,
    compose,
    estimate_dlt,
    intersection_area,
    invert,
    project_mask,
)
from .registration import Feature

_OVERLAP_AREA_EPS = 1e-9


@dataclass(frozen=True)
class WorldConfig:
    """Knobs for the generated lot and camera rig. Lengths in meters."""

    rows: int = 2
    cols: int = 30
    space_width: float = 2.5
    space_depth: float = 5.0
    aisle: float = 6.0
    occupancy_prob: float = 0.7
    cameras: int = 5
    overlap_frac: float = 0.4
    image_width: float = 1280.0
    image_height: float = 720.0
    margin: float = 2.0
    far_widen_range: tuple[float, float] = (1.04, 1.12)
    shift_jitter_frac: float = 0.01
    landmark_spacing: float = 2.0
    landmark_jitter: float = 0.6
    descriptor_dim: int = 32
    descriptor_noise_sigma: float = 0.0
    visibility_threshold: float = 0.5
    vehicle_overhang: float = 0.15
    forbid_triple_overlap: bool = True

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InfeasibleConfig("need at least one row and one column of spaces")
        if self.cameras < 1:
            raise InfeasibleConfig("need at least one camera")
        if min(self.space_width, self.space_depth, self.image_width, self.image_height) <= 0:
            raise InfeasibleConfig("sizes must be positive")
        if not (0.0 <= self.occupancy_prob <= 1.0):
            raise InfeasibleConfig("occupancy_prob must be in [0, 1]")
        if not (0.0 <= self.overlap_frac <= 0.9):
            raise InfeasibleConfig("overlap_frac must be in [0, 0.9]")
        if self.far_widen_range[0] < 1.0 or self.far_widen_range[1] < self.far_widen_range[0]:
            raise InfeasibleConfig("far_widen_range must be increasing and >= 1")
        if not (0.0 < self.visibility_threshold <= 1.0):
            raise InfeasibleConfig("visibility_threshold must be in (0, 1]")
        if self.landmark_spacing <= 0 or self.descriptor_dim < 2:
            raise InfeasibleConfig("bad landmark configuration")
        # Adjacent vehicles must stay below the duplicate threshold when
        # noise-free: their IoU is overhang/(1+overhang) along the row.
        if not (0.0 <= self.vehicle_overhang < 0.2):
            raise InfeasibleConfig("vehicle_overhang must be in [0, 0.2)")


@dataclass(frozen=True)
class CameraModel:
    """One camera: id, ground-to-image map, extent, declared neighbors."""

    camera_id: str
    ground_to_image: Homography
    bounds: ImageBounds
    neighbors: tuple[str, ...]
    footprint: MaskPolygon  # ground-plane region mapped onto the image


@dataclass(frozen=True)
class Landmark:
    point: Point
    descriptor: tuple[float, ...]


@dataclass(frozen=True)
class ParkingWorld:
    """Immutable synthetic lot with full ground truth.

    ``spaces`` are the painted parking rectangles; ``vehicles`` the quads a
    parked car actually covers (index-aligned, slightly overhanging the
    space delimiters along the row).
    """

    config: WorldConfig
    seed: int
    spaces: tuple[MaskPolygon, ...]
    vehicles: tuple[MaskPolygon, ...]
    occupancy: tuple[bool, ...]
    cameras: tuple[CameraModel, ...]
    landmarks: tuple[Landmark, ...]

    @property
    def num_spaces(self) -> int:
        return len(self.spaces)

    @property
    def occupied_count(self) -> int:
        return sum(self.occupancy)

    def camera(self, camera_id: str) -> CameraModel:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(f"unknown camera {camera_id!r}")

    def camera_ids(self) -> tuple[str, ...]:
        return tuple(cam.camera_id for cam in self.cameras)

    def neighbor_pairs(self) -> tuple[tuple[str, str], ...]:
        pairs = set()
        for cam in self.cameras:
            for other in cam.neighbors:
                pairs.add(tuple(sorted((cam.camera_id, other))))
        return tuple(sorted(pairs))

    def with_round_occupancy(self, round_index: int, rule: str = "per_round") -> ParkingWorld:
        """World as it looks in a given round under the occupancy rule."""
        if rule == "static":
            return self
        if rule != "per_round":
            raise ValueError(f"unknown occupancy rule {rule!r}")
        rng = np.random.default_rng(derive_seed(self.seed, "occupancy", round_index))
        occupancy = tuple(bool(v) for v in rng.random(self.num_spaces) < self.config.occupancy_prob)
        return replace(self, occupancy=occupancy)


def _w_value(cam: CameraModel, point: Point) -> float:
    m = cam.ground_to_image.m
    return float(m[2, 0] * point[0] + m[2, 1] * point[1] + m[2, 2])


def _w_reference(cam: CameraModel) -> float:
    """Sign of the homogeneous coordinate inside the footprint.

    The canonical matrix scale makes the absolute sign arbitrary; only
    consistency with the footprint interior is meaningful.
    """
    return _w_value(cam, cam.footprint.centroid())


def _project_space(cam: CameraModel, quad: MaskPolygon) -> tuple[MaskPolygon, float] | None:
    """Projection of a ground quad, or None when cleanly invisible.

    A quad whose homogeneous coordinate differs in sign from the footprint
    interior lies beyond the camera's horizon line; its algebraic image is
    a mirror phantom, so the quad is simply not seen.
    """
    ref = _w_reference(cam)
    ws = [_w_value(cam, v) for v in quad.vertices]
    if any(w * ref <= 1e-12 for w in ws):
        return None
    try:
        return project_mask(cam.ground_to_image, quad, cam.bounds)
    except (DegenerateProjection, PointAtInfinity):
        return None


def visible_spaces(world: ParkingWorld, camera_id: str) -> tuple[int, ...]:
    """Indices of occupied spaces this camera sees well enough to detect."""
    cam = world.camera(camera_id)
    threshold = world.config.visibility_threshold
    out = []
    for idx, (quad, occupied) in enumerate(zip(world.vehicles, world.occupancy)):
        if not occupied:
            continue
        projected = _project_space(cam, quad)
        if projected is not None and projected[1] >= threshold:
            out.append(idx)
    return tuple(out)


def coverage_depth(world: ParkingWorld) -> dict[int, int]:
    """How many cameras see each occupied space."""
    depth: dict[int, int] = {}
    for cam_id in world.camera_ids():
        for idx in visible_spaces(world, cam_id):
            depth[idx] = depth.get(idx, 0) + 1
    return depth


def true_global_count(world: ParkingWorld) -> int:
    """Occupied spaces visible to at least one camera, each counted once."""
    return len(coverage_depth(world))


def true_pairwise_homography(world: ParkingWorld, i: str, j: str) -> Homography:
    """Exact plane-j-to-plane-i map: G_i composed with G_j inverse."""
    g_i = world.camera(i).ground_to_image
    g_j = world.camera(j).ground_to_image
    return compose(g_i, invert(g_j))


def render_observation(world: ParkingWorld, camera_id: str, round_index: int = 0) -> Observation:
    """What one camera captures: truth masks plus landmark features."""
    cam = world.camera(camera_id)
    cfg = world.config
    masks = []
    for idx, (quad, occupied) in enumerate(zip(world.vehicles, world.occupancy)):
        if not occupied:
            continue
        result = _project_space(cam, quad)
        if result is not None and result[1] >= cfg.visibility_threshold:
            masks.append((idx, result[0]))

    noise_rng = None
    if cfg.descriptor_noise_sigma > 0:
        noise_rng = np.random.default_rng(
            derive_seed(world.seed, f"descriptors:{camera_id}", round_index)
        )
    features = []
    m = cam.ground_to_image.m
    ref = _w_reference(cam)
    for lm in world.landmarks:
        x, y = lm.point
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        if w * ref <= 1e-12:
            continue
        px = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
        py = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
        if not cam.bounds.contains((px, py)):
            continue
        descriptor = lm.descriptor
        if noise_rng is not None:
            descriptor = tuple(
                d + n
                for d, n in zip(descriptor, noise_rng.normal(0.0, cfg.descriptor_noise_sigma, len(descriptor)))
            )
        features.append(Feature((px, py), descriptor))
    return Observation(
        camera_id=camera_id,
        bounds=cam.bounds,
        visible_truth=tuple(masks),
        landmark_features=tuple(features),
    )


def _chain_footprints(cfg: WorldConfig, rng: np.random.Generator) -> list[MaskPolygon]:
    """Ground trapezoids for a left-to-right camera chain."""
    lot_width = cfg.cols * cfg.space_width
    lot_depth = cfg.rows * cfg.space_depth + (cfg.rows - 1) * cfg.aisle
    x_lo, x_hi = -cfg.margin, lot_width + cfg.margin
    y_lo, y_hi = -cfg.margin, lot_depth + cfg.margin
    span = x_hi - x_lo

    n = cfg.cameras
    length = span / (1.0 + (n - 1) * (1.0 - cfg.overlap_frac))
    step = length * (1.0 - cfg.overlap_frac)
    footprints = []
    for k in range(n):
        near_x0 = x_lo + k * step
        near_x1 = near_x0 + length
        center = (near_x0 + near_x1) / 2.0
        widen = float(rng.uniform(*cfg.far_widen_range))
        shift = float(rng.uniform(-1.0, 1.0)) * cfg.shift_jitter_frac * length
        half_far = (length / 2.0) * widen
        footprints.append(
            MaskPolygon(
                (
                    (near_x0, y_lo),
                    (near_x1, y_lo),
                    (center + shift + half_far, y_hi),
                    (center + shift - half_far, y_hi),
                )
            )
        )
    return footprints


def camera_from_footprint(camera_id: str, footprint: MaskPolygon, cfg: WorldConfig) -> CameraModel:
    """Exact homography sending the footprint corners to the image corners."""
    (g0, g1, g2, g3) = footprint.vertices
    w, h = cfg.image_width, cfg.image_height
    correspondences = [
        Correspondence(g0, (0.0, h)),
        Correspondence(g1, (w, h)),
        Correspondence(g2, (w, 0.0)),
        Correspondence(g3, (0.0, 0.0)),
    ]
    return CameraModel(
        camera_id=camera_id,
        ground_to_image=estimate_dlt(correspondences),
        bounds=ImageBounds(w, h),
        neighbors=(),
        footprint=footprint,
    )


def generate_world(cfg: WorldConfig, seed: int) -> ParkingWorld:
    """Deterministic world for a config and seed.

    All randomness (occupancy, footprint jitter, landmark placement and
    descriptors) flows from one seeded generator in a fixed draw order.
    """
    cfg.validate()
    rng = np.random.default_rng(derive_seed(seed, "world", 0))

    spaces = []
    vehicles = []
    overhang = cfg.vehicle_overhang * cfg.space_width
    for r in range(cfg.rows):
        y0 = r * (cfg.space_depth + cfg.aisle)
        for c in range(cfg.cols):
            x0 = c * cfg.space_width
            spaces.append(
                MaskPolygon.rectangle(x0, y0, x0 + cfg.space_width, y0 + cfg.space_depth)
            )
            vehicles.append(
                MaskPolygon.rectangle(
                    x0 - overhang, y0, x0 + cfg.space_width + overhang, y0 + cfg.space_depth
                )
            )
    occupancy = tuple(bool(v) for v in rng.random(len(spaces)) < cfg.occupancy_prob)

    footprints = _chain_footprints(cfg, rng)
    cameras = [
        camera_from_footprint(f"cam{k}", footprint, cfg)
        for k, footprint in enumerate(footprints)
    ]

    # Neighbor graph from positive footprint overlap on the ground plane.
    with_neighbors = []
    for cam in cameras:
        neighbor_ids = tuple(
            other.camera_id
            for other in cameras
            if other.camera_id != cam.camera_id
            and intersection_area(cam.footprint, other.footprint) > _OVERLAP_AREA_EPS
        )
        with_neighbors.append(replace(cam, neighbors=neighbor_ids))

    lot_width = cfg.cols * cfg.space_width
    lot_depth = cfg.rows * cfg.space_depth + (cfg.rows - 1) * cfg.aisle
    xs = np.arange(-cfg.margin, lot_width + cfg.margin, cfg.landmark_spacing)
    ys = np.arange(-cfg.margin, lot_depth + cfg.margin, cfg.landmark_spacing)
    landmarks = []
    for gx in xs:
        for gy in ys:
            jitter = rng.uniform(-cfg.landmark_jitter, cfg.landmark_jitter, 2)
            descriptor = tuple(float(v) for v in rng.normal(0.0, 1.0, cfg.descriptor_dim))
            landmarks.append(Landmark((float(gx + jitter[0]), float(gy + jitter[1])), descriptor))

    world = ParkingWorld(
        config=cfg,
        seed=seed,
        spaces=tuple(spaces),
        vehicles=tuple(vehicles),
        occupancy=occupancy,
        cameras=tuple(with_neighbors),
        landmarks=tuple(landmarks),
    )
    _validate_world(world)
    return world


def _validate_world(world: ParkingWorld) -> None:
    cfg = world.config
    if cfg.forbid_triple_overlap:
        blanket = replace(world, occupancy=(True,) * world.num_spaces)
        depth = coverage_depth(blanket)
        worst = max(depth.values(), default=0)
        if worst > 2:
            raise InfeasibleConfig(
                f"layout allows a space to be seen by {worst} cameras; "
                "set forbid_triple_overlap=False for diagnostic layouts"
            )


# --- sequences ------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSpec:
    """One evaluation sequence: a world plus per-round behavior."""

    label: str
    config: WorldConfig
    world_seed: int
    rounds: int = 4
    occupancy_rule: str = "per_round"
    noise: DetectorNoise = field(default_factory=DetectorNoise)

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("a sequence needs at least one round")

    def build_world(self) -> ParkingWorld:
        return generate_world(self.config, self.world_seed)


SCENARIO_SCHEMA_VERSION = 1


def sequence_to_json_dict(spec: SequenceSpec) -> dict:
    """Scenario file content: the sequence spec plus a ground-truth dump.

    The world itself is not serialized (it is deterministic from config and
    seed); the dump exists so external tooling can verify counts without
    running the generator.
    """
    from dataclasses import asdict

    world = spec.build_world()
    per_round = []
    for r in range(spec.rounds):
        w = world.with_round_occupancy(r, spec.occupancy_rule)
        per_round.append(
            {
                "round": r,
                "occupied": w.occupied_count,
                "true_global_count": true_global_count(w),
            }
        )
    cameras = {}
    for cam in world.cameras:
        cameras[cam.camera_id] = {
            "matrix": [[float(v) for v in row] for row in cam.ground_to_image.m],
            "width": cam.bounds.width,
            "height": cam.bounds.height,
            "neighbors": sorted(cam.neighbors),
            "footprint": [[x, y] for x, y in cam.footprint.vertices],
        }
    config = asdict(spec.config)
    config["far_widen_range"] = list(spec.config.far_widen_range)
    return {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "kind": "lotfusion.scenario",
        "label": spec.label,
        "world_seed": spec.world_seed,
        "rounds": spec.rounds,
        "occupancy_rule": spec.occupancy_rule,
        "noise": {
            "p_miss": spec.noise.p_miss,
            "fp_rate": spec.noise.fp_rate,
            "jitter_sigma": spec.noise.jitter_sigma,
        },
        "config": config,
        "ground_truth": {
            "num_spaces": world.num_spaces,
            "camera_ids": list(world.camera_ids()),
            "neighbor_pairs": [list(p) for p in world.neighbor_pairs()],
            "per_round": per_round,
        },
    }


def sequence_from_json_dict(raw: dict) -> SequenceSpec:
    """Rebuild a sequence spec from a scenario file."""
    from .errors import SchemaMismatch

    try:
        if raw.get("kind") != "lotfusion.scenario":
            raise SchemaMismatch("not a lotfusion scenario file")
        if raw["schema_version"] != SCENARIO_SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported scenario version {raw['schema_version']!r}")
        cfg_raw = dict(raw["config"])
        cfg_raw["far_widen_range"] = tuple(cfg_raw["far_widen_range"])
        noise_raw = raw["noise"]
        return SequenceSpec(
            label=str(raw["label"]),
            config=WorldConfig(**cfg_raw),
            world_seed=int(raw["world_seed"]),
            rounds=int(raw["rounds"]),
            occupancy_rule=str(raw["occupancy_rule"]),
            noise=DetectorNoise(
                p_miss=float(noise_raw["p_miss"]),
                fp_rate=float(noise_raw["fp_rate"]),
                jitter_sigma=float(noise_raw["jitter_sigma"]),
            ),
        )
    except SchemaMismatch:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed scenario file: {exc}") from exc


NOISE_PRESETS: dict[str, DetectorNoise] = {
    "zero": DetectorNoise(),
    "light": DetectorNoise(p_miss=0.04, fp_rate=0.05, jitter_sigma=1.0),
    "standard": DetectorNoise(p_miss=0.08, fp_rate=0.1, jitter_sigma=1.5),
    "heavy": DetectorNoise(p_miss=0.12, fp_rate=0.2, jitter_sigma=2.5),
}

_CONDITION_NOISE = {"Sunny": "standard", "Overcast": "light", "Rainy": "heavy"}

_CHAIN5 = WorldConfig()


def standard_suite(noise: str | None = None, rounds: int = 4) -> tuple[SequenceSpec, ...]:
    """The six documented sequences: two per condition label.

    ``noise`` forces one preset everywhere (e.g. "zero" for conservation
    checks); by default each condition uses its own preset.
    """
    specs = []
    for condition, base_seed in (("Overcast", 200), ("Rainy", 300), ("Sunny", 100)):
        for k in (1, 2):
            preset = noise if noise is not None else _CONDITION_NOISE[condition]
            specs.append(
                SequenceSpec(
                    label=f"{condition}-{k}",
                    config=_CHAIN5,
                    world_seed=base_seed + k,
                    rounds=rounds,
                    noise=NOISE_PRESETS[preset],
                )
            )
    return tuple(specs)


def preset(name: str, noise: str = "zero", rounds: int = 4) -> SequenceSpec:
    """Built-in single-sequence layouts by name."""
    configs = {
        "single1": replace(_CHAIN5, cameras=1, cols=10),
        "pair2": replace(_CHAIN5, cameras=2, cols=14),
        "chain3": replace(_CHAIN5, cameras=3, cols=20),
        "chain5": _CHAIN5,
        "triple3": replace(
            _CHAIN5, cameras=3, cols=18, overlap_frac=0.6, forbid_triple_overlap=False
        ),
    }
    if name not in configs:
        raise InfeasibleConfig(f"unknown preset {name!r}; choose from {sorted(configs)}")
    return SequenceSpec(
        label=name,
        config=configs[name],
        world_seed={"single1": 11, "pair2": 22, "chain3": 33, "chain5": 55, "triple3": 77}[name],
        rounds=rounds,
        noise=NOISE_PRESETS[noise],
    )
