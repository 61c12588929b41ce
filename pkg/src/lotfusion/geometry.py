"""Planar projective primitives.

Homography algebra, convex mask polygons, polygon clipping / IoU, and
homography estimation (normalized DLT and RANSAC). Everything operates on
immutable values and is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateProjection,
    InsufficientConsensus,
    PointAtInfinity,
    SingularMatrix,
)

Point = tuple[float, float]

_W_EPS = 1e-12
_DET_EPS = 1e-12
_AREA_EPS = 1e-9
_CONVEX_EPS = 1e-9


def _canonicalize(m: np.ndarray) -> np.ndarray:
    """Scale a 3x3 matrix so its largest-magnitude entry becomes 1.

    The pivot is the first entry in row-major order attaining the maximum
    absolute value; dividing by its signed value fixes the projective scale
    (and sign), so two matrices describing the same map get identical
    canonical forms.
    """
    flat = np.abs(m).ravel()
    pivot = m.ravel()[int(np.argmax(flat))]
    if abs(pivot) <= _DET_EPS:
        raise SingularMatrix("matrix is numerically zero")
    return m / pivot


@dataclass(frozen=True, eq=False)
class Homography:
    """A 3x3 projective map between pixel planes, stored in canonical scale.

    Canonical scale: the largest-magnitude entry equals 1, so equality of
    two homographies is plain entrywise comparison of ``m``.
    """

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography needs a finite 3x3 matrix")
        m = _canonicalize(m)
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise SingularMatrix("homography matrix is numerically singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> Homography:
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> Homography:
        sy = sx if sy is None else sy
        return cls(np.diag([sx, sy, 1.0]))

    def is_close(self, other: Homography, tol: float = 1e-9) -> bool:
        """Entrywise comparison of canonical forms."""
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=tol))

    def max_entry_delta(self, other: Homography) -> float:
        return float(np.max(np.abs(self.m - other.m)))

    def __repr__(self) -> str:  # keep reprs short in logs
        rows = "; ".join(" ".join(f"{v:.6g}" for v in row) for row in self.m)
        return f"Homography([{rows}])"


def apply(h: Homography, p: Point) -> Point:
    """Map a point through a homography.

    Raises PointAtInfinity when the homogeneous image has |w| <= 1e-12.
    """
    x, y = p
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= _W_EPS:
        raise PointAtInfinity(f"point {p} maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def compose(a: Homography, b: Homography) -> Homography:
    """Composition: the map taking p to a(b(p))."""
    return Homography(a.m @ b.m)


def invert(h: Homography) -> Homography:
    if abs(np.linalg.det(h.m)) <= _DET_EPS:
        raise SingularMatrix("cannot invert a numerically singular homography")
    return Homography(np.linalg.inv(h.m))


# --- polygons ----------------------------------------------------------------


def _signed_area(vertices) -> float:
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def polygon_area(vertices) -> float:
    """Unsigned shoelace area of a simple polygon."""
    return abs(_signed_area(vertices))


def convex_hull(points) -> tuple[Point, ...]:
    """Convex hull in counter-clockwise order (Andrew's monotone chain).

    Collinear boundary points are dropped; fewer than 3 distinct points
    yield a hull shorter than 3 (left to the caller to reject).
    """
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) <= 2:
        return tuple(pts)

    def half(seq: list[Point]) -> list[Point]:
        out: list[Point] = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return tuple(lower[:-1] + upper[:-1])


@dataclass(frozen=True)
class MaskPolygon:
    """Convex polygon in image pixel coordinates representing one detection.

    Vertices are counter-clockwise, at least 3, strictly convex up to a
    1e-9 cross-product slack, with non-zero area.
    """

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("mask polygon needs at least 3 vertices")
        if not all(math.isfinite(x) and math.isfinite(y) for x, y in verts):
            raise ValueError("mask polygon vertices must be finite")
        area = _signed_area(verts)
        if area <= _AREA_EPS:
            raise ValueError(
                "mask polygon must be counter-clockwise with non-zero area"
                f" (signed area {area:.3g})"
            )
        n = len(verts)
        for i in range(n):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % n]
            cx, cy = verts[(i + 2) % n]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross < -_CONVEX_EPS:
                raise ValueError("mask polygon is not convex")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_points(cls, points: list[Point] | tuple[Point, ...] | np.ndarray) -> MaskPolygon:
        """Build the convex hull of arbitrary points as a mask."""
        hull = convex_hull(points)
        if len(hull) < 3:
            raise ValueError("points are collinear; no polygon")
        return cls(hull)

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> MaskPolygon:
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def centroid(self) -> Point:
        """Area centroid of the polygon."""
        a = cx = cy = 0.0
        n = len(self.vertices)
        for i in range(n):
            x0, y0 = self.vertices[i]
            x1, y1 = self.vertices[(i + 1) % n]
            cross = x0 * y1 - x1 * y0
            a += cross
            cx += (x0 + x1) * cross
            cy += (y0 + y1) * cross
        a /= 2.0
        return (cx / (6.0 * a), cy / (6.0 * a))

    def contains(self, p: Point, slack: float = 1e-9) -> bool:
        """Point-in-convex-polygon test (boundary counts as inside)."""
        px, py = p
        n = len(self.vertices)
        for i in range(n):
            ax, ay = self.vertices[i]
            bx, by = self.vertices[(i + 1) % n]
            if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < -slack:
                return False
        return True


@dataclass(frozen=True)
class ImageBounds:
    """Pixel extent of one camera image."""

    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image bounds must be positive")

    def as_polygon(self) -> MaskPolygon:
        return MaskPolygon.rectangle(0.0, 0.0, self.width, self.height)

    def contains(self, p: Point) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair: p in the source image, q in the target image."""

    p: Point
    q: Point

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (*self.p, *self.q)):
            raise ValueError("correspondence coordinates must be finite")


def clip_convex(subject: tuple[Point, ...], clip: tuple[Point, ...]) -> tuple[Point, ...]:
    """Sutherland-Hodgman clip of one convex polygon by another.

    Both polygons must be counter-clockwise. The result may contain
    duplicate or collinear vertices; area computations are unaffected.
    """
    output = list(subject)
    cx1, cy1 = clip[-1]
    for cx2, cy2 in clip:
        if not output:
            return ()
        ex, ey = cx2 - cx1, cy2 - cy1
        inputs = output
        output = []
        sx, sy = inputs[-1]
        s_in = ex * (sy - cy1) - ey * (sx - cx1) >= 0.0
        for px, py in inputs:
            p_in = ex * (py - cy1) - ey * (px - cx1) >= 0.0
            if p_in != s_in:
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                t = (ex * (cy1 - sy) - ey * (cx1 - sx)) / denom
                output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
        cx1, cy1 = cx2, cy2
    return tuple(output)


def intersection_area(a: MaskPolygon, b: MaskPolygon) -> float:
    clipped = clip_convex(a.vertices, b.vertices)
    if len(clipped) < 3:
        return 0.0
    return polygon_area(clipped)


def iou(a: MaskPolygon, b: MaskPolygon) -> float:
    """Intersection over union of two convex masks via polygon clipping."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def project_mask(
    h: Homography, mask: MaskPolygon, bounds: ImageBounds
) -> tuple[MaskPolygon, float]:
    """Project a mask into another image plane.

    Returns the convex hull of the projected vertices plus the fraction of
    its area lying inside the target image rectangle. Extreme perspective
    can make the raw vertex images concave; the hull repair keeps the
    convexity invariant (second-order error for car-sized quads).
    """
    images = [apply(h, v) for v in mask.vertices]
    hull = convex_hull(images)
    if len(hull) < 3 or polygon_area(hull) < _AREA_EPS:
        raise DegenerateProjection(f"projection of {mask!r} collapsed")
    projected = MaskPolygon(hull)
    inside = intersection_area(projected, bounds.as_polygon())
    return projected, inside / projected.area


# --- homography estimation ----------------------------------------------------


@dataclass(frozen=True)
class RansacParams:
    """Knobs for robust homography fitting.

    Defaults: 1000 iterations, 3 px symmetric reprojection threshold, a
    minimum consensus of 8, fixed seed 0. ``confidence`` caps the trial
    count adaptively below ``iterations`` once a strong model is found;
    the schedule depends only on observed inlier counts, so runs stay
    deterministic.
    """

    iterations: int = 1000
    reprojection_threshold: float = 3.0
    min_inliers: int = 8
    rng_seed: int = 0
    confidence: float = 0.999999

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.reprojection_threshold <= 0 or self.min_inliers < 4:
            raise ValueError("invalid RANSAC parameters")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0, 1)")


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley similarity: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(points - centroid, axis=1)))
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def estimate_dlt(correspondences: list[Correspondence] | tuple[Correspondence, ...]) -> Homography:
    """Least-squares homography from >= 4 correspondences (normalized DLT).

    Exact on noise-free inputs. Raises DegenerateConfiguration when the
    design matrix is rank-deficient (e.g. 3 collinear source points in a
    minimal set).
    """
    if len(correspondences) < 4:
        raise ValueError("DLT needs at least 4 correspondences")
    src = np.array([c.p for c in correspondences], dtype=float)
    dst = np.array([c.q for c in correspondences], dtype=float)

    t_src = _normalization(src)
    t_dst = _normalization(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ t_src.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ t_dst.T

    n = len(correspondences)
    a = np.zeros((2 * n, 9))
    x, y = sh[:, 0], sh[:, 1]
    u, v = dh[:, 0], dh[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v

    _, s, vh = np.linalg.svd(a)
    # A unique (up to scale) solution needs rank exactly 8; anything lower
    # means a solution family, e.g. 3 collinear points in a minimal set.
    if s[0] <= 0 or int(np.sum(s > 1e-9 * s[0])) < 8:
        raise DegenerateConfiguration("correspondences do not pin down a homography")
    hn = vh[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    try:
        return Homography(m)
    except SingularMatrix as exc:
        raise DegenerateConfiguration(str(exc)) from exc


def _symmetric_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-pair max of forward and backward reprojection distance.

    Points mapping (numerically) to infinity get infinite error.
    """
    out = np.full(len(src), np.inf)
    m = h.m
    mi = np.linalg.inv(m)
    sh = np.column_stack([src, np.ones(len(src))])
    dh = np.column_stack([dst, np.ones(len(dst))])
    fwd = sh @ m.T
    bwd = dh @ mi.T
    ok = (np.abs(fwd[:, 2]) > _W_EPS) & (np.abs(bwd[:, 2]) > _W_EPS)
    if not np.any(ok):
        return out
    fwd_pts = fwd[ok, :2] / fwd[ok, 2:3]
    bwd_pts = bwd[ok, :2] / bwd[ok, 2:3]
    e_fwd = np.linalg.norm(fwd_pts - dst[ok], axis=1)
    e_bwd = np.linalg.norm(bwd_pts - src[ok], axis=1)
    out[ok] = np.maximum(e_fwd, e_bwd)
    return out


def estimate_ransac(
    correspondences: list[Correspondence] | tuple[Correspondence, ...],
    params: RansacParams = RansacParams(),
) -> tuple[Homography, tuple[int, ...]]:
    """Consensus homography fit, deterministic for a fixed seed.

    Each iteration samples 4 correspondences, fits a DLT model, and counts
    inliers by symmetric reprojection error strictly below the threshold.
    The best model is refit on its full inlier set. Sampling stops when
    every correspondence is an inlier or the confidence-based trial cap
    (see RansacParams) is exhausted.
    """
    if len(correspondences) < 4:
        raise ValueError("RANSAC needs at least 4 correspondences")
    src = np.array([c.p for c in correspondences], dtype=float)
    dst = np.array([c.q for c in correspondences], dtype=float)
    n = len(correspondences)

    rng = np.random.default_rng(params.rng_seed)
    best_count = 0
    best_mask: np.ndarray | None = None
    max_trials = params.iterations
    trial = 0
    while trial < max_trials:
        trial += 1
        idx = rng.choice(n, size=4, replace=False)
        sample = [correspondences[int(i)] for i in idx]
        try:
            model = estimate_dlt(sample)
        except DegenerateConfiguration:
            continue
        errors = _symmetric_errors(model, src, dst)
        mask = errors < params.reprojection_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            if best_count == n:
                break
            # Adaptive cap: trials needed so an all-inlier sample was drawn
            # with the configured confidence.
            miss = 1.0 - (best_count / n) ** 4
            if miss > 0:
                needed = math.log(1.0 - params.confidence) / math.log(miss)
                max_trials = min(max_trials, max(trial, int(math.ceil(needed))))

    if best_mask is None or best_count < params.min_inliers:
        raise InsufficientConsensus(
            f"best consensus {best_count} below minimum {params.min_inliers}"
        )
    inliers = tuple(int(i) for i in np.flatnonzero(best_mask))
    refit = estimate_dlt([correspondences[i] for i in inliers])
    return refit, inliers
