"""
Low-level image operators used by court detection.

Contains the raster types (`ImageBuffer`, `EdgeMap`), the Canny edge detector
(Gaussian blur, Sobel gradients, 4-bin non-maximum suppression, hysteresis),
a progressive probabilistic Hough transform that emits finite segments, and the
monotone-chain convex hull of the segment endpoints.

All functions are pure: they never modify their inputs and return the same
output for the same input.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError, InvalidImageError, InvalidParameterError
from .utils import round_half_up


logger = logging.getLogger(__name__)

Point = tuple[int, int]

# BT.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """
    An 8-bit raster image with 1 or 3 interleaved channels.

    `pixels` is a read-only uint8 array of shape (height, width, channels).
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = self.pixels
        if arr.dtype != np.uint8:
            raise InvalidImageError(f"expected uint8 samples, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise InvalidImageError(f"expected shape (H, W, 1|3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidImageError(f"empty image {arr.shape}")
        arr = np.ascontiguousarray(arr).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, array) -> "ImageBuffer":
        """Wraps an (H, W) or (H, W, C) array; values must already lie in [0, 255]."""
        arr = np.asarray(array)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise InvalidImageError("sample values outside [0, 255]")
            arr = arr.astype(np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        """Row-major interleaved samples."""
        return self.pixels.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True, eq=False)
class EdgeMap:
    """Binary per-pixel edge flags, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.bits, dtype=bool).copy()
        if arr.ndim != 2:
            raise InvalidImageError(f"edge map must be 2-D, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class LineSegment:
    """
    A detected segment with endpoints p0, p1 and the normal form of its line.

    theta lies in [0, π) and rho is signed: x·cos(theta) + y·sin(theta) = rho.
    """

    p0: Point
    p1: Point
    theta: float
    rho: float

    def __post_init__(self):
        if self.p0 == self.p1:
            raise DegenerateGeometryError(f"segment endpoints coincide at {self.p0}")

    @classmethod
    def through(cls, p0: Point, p1: Point) -> "LineSegment":
        """Builds a segment and derives (rho, theta) from its endpoints."""
        p0, p1 = sorted([(int(p0[0]), int(p0[1])), (int(p1[0]), int(p1[1]))])
        dx, dy = p1[0] - p0[0], p1[1] - p0[1]
        theta = math.atan2(-dx, dy) % math.pi
        rho = p0[0] * math.cos(theta) + p0[1] * math.sin(theta)
        return cls(p0=p0, p1=p1, theta=theta, rho=rho)

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def distance_to_line(self, x: float, y: float) -> float:
        return abs(x * math.cos(self.theta) + y * math.sin(self.theta) - self.rho)


@dataclass(frozen=True)
class ConvexHull:
    """Hull vertices in counter-clockwise order (positive signed area)."""

    vertices: tuple[Point, ...]

    @property
    def is_degenerate(self) -> bool:
        return len(self.vertices) < 3

    def contains(self, point: Sequence[float]) -> bool:
        """Closed point-in-convex-polygon test."""
        verts = self.vertices
        if len(verts) == 1:
            return tuple(point) == verts[0]
        if len(verts) == 2:
            (ax, ay), (bx, by) = verts
            px, py = point
            if _cross(verts[0], verts[1], point) != 0:
                return False
            return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)
        return all(
            _cross(verts[i], verts[(i + 1) % len(verts)], point) >= 0
            for i in range(len(verts))
        )


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """
    Converts an RGB image to single-channel luma.

    Args:
        img (ImageBuffer): A 3-channel image.

    Raises:
        InvalidImageError: If the image does not have 3 channels.

    Returns:
        ImageBuffer: round(0.299·R + 0.587·G + 0.114·B) per pixel.
    """
    if img.channels != 3:
        raise InvalidImageError(f"grayscale conversion needs 3 channels, got {img.channels}")
    luma = img.pixels.astype(np.float64) @ _LUMA
    return ImageBuffer.from_array(np.clip(round_half_up(luma), 0, 255).astype(np.uint8))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(3·sigma)."""
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2 * sigma**2))
    return kernel / kernel.sum()


def _blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel(sigma)
    # mode="nearest" replicates the edge sample.
    out = ndimage.correlate1d(plane, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def _single_channel(img: ImageBuffer, op: str) -> np.ndarray:
    if img.channels != 1:
        raise InvalidImageError(f"{op} needs a 1-channel image, got {img.channels}")
    return img.pixels[:, :, 0].astype(np.float64)


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    """
    Blurs a grayscale image with a separable, normalized Gaussian.

    Args:
        img (ImageBuffer): A 1-channel image.
        sigma (float): Standard deviation in pixels; the kernel radius is ceil(3·sigma).

    Raises:
        InvalidParameterError: If sigma is not positive.
        InvalidImageError: If the image is not single-channel.

    Returns:
        ImageBuffer: The blurred image, borders handled by edge replication.
    """
    plane = _single_channel(img, "gaussian_blur")
    blurred = _blur(plane, sigma)
    return ImageBuffer.from_array(np.clip(round_half_up(blurred), 0, 255).astype(np.uint8))


def sobel_gradients(img: ImageBuffer, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Blurs the image and returns Sobel (gx, gy), zeroed on the 1-pixel frame.

    The blur runs in floating point; Canny consumes these gradients directly.
    """
    plane = _blur(_single_channel(img, "sobel_gradients"), sigma)
    gx = ndimage.sobel(plane, axis=1)
    gy = ndimage.sobel(plane, axis=0)
    for grad in (gx, gy):
        grad[0, :] = grad[-1, :] = 0.0
        grad[:, 0] = grad[:, -1] = 0.0
    return gx, gy


# Neighbor offsets (dx, dy) per quantized gradient direction: 0°, 45°, 90°, 135°.
_NMS_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1))


def _shifted(padded: np.ndarray, dx: int, dy: int, height: int, width: int) -> np.ndarray:
    return padded[1 + dy : 1 + dy + height, 1 + dx : 1 + dx + width]


def canny(
    img: ImageBuffer, low: float = 50.0, high: float = 150.0, sigma: float = 1.4
) -> EdgeMap:
    """
    Detects edges with the Canny operator.

    Non-maximum suppression keeps a pixel when its magnitude is >= the neighbor
    behind it and > the neighbor ahead of it along the quantized gradient
    direction, so a two-pixel plateau yields a single edge pixel.

    Args:
        img (ImageBuffer): A 1-channel image of at least 3×3 pixels.
        low (float): Hysteresis floor on the gradient magnitude.
        high (float): Seed threshold on the gradient magnitude.
        sigma (float): Gaussian pre-blur.

    Raises:
        InvalidParameterError: If not 0 < low < high.
        InvalidImageError: If the image is smaller than 3×3 or not single-channel.

    Returns:
        EdgeMap: Pixels 8-connected, through kept pixels, to a seed >= high.
    """
    if not 0 < low < high:
        raise InvalidParameterError(f"need 0 < low < high, got low={low}, high={high}")
    if img.width < 3 or img.height < 3:
        raise InvalidImageError(f"canny needs at least 3x3 pixels, got {img.width}x{img.height}")

    gx, gy = sobel_gradients(img, sigma)
    mag = np.hypot(gx, gy)
    height, width = mag.shape

    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = (np.floor((angle + 22.5) / 45.0).astype(np.int64)) % 4

    padded = np.pad(mag, 1)
    keep = np.zeros_like(mag, dtype=bool)
    for direction, (dx, dy) in enumerate(_NMS_OFFSETS):
        ahead = _shifted(padded, dx, dy, height, width)
        behind = _shifted(padded, -dx, -dy, height, width)
        keep |= (bins == direction) & (mag >= behind) & (mag > ahead)
    keep &= mag > 0

    candidates = keep & (mag >= low)
    strong = candidates & (mag >= high)
    labels, count = ndimage.label(candidates, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return EdgeMap(np.zeros((height, width), dtype=bool))
    seeded = np.unique(labels[strong])
    seeded = seeded[seeded > 0]
    return EdgeMap(np.isin(labels, seeded))


def _walk(
    mask: np.ndarray, x0: int, y0: int, dx: float, dy: float, max_gap: int
) -> tuple[Point, Point, list[Point]]:
    """
    Follows a line from (x0, y0) in both directions over unconsumed edge pixels.

    Steps one pixel along the major axis and looks for an edge pixel at the
    predicted minor coordinate or one pixel either side; the prediction restarts
    from every hit so angular quantization error does not accumulate.
    """
    height, width = mask.shape
    x_major = abs(dx) >= abs(dy)
    if x_major:
        slope, m0, n0, m_len, n_len = dy / dx, x0, y0, width, height
    else:
        slope, m0, n0, m_len, n_len = dx / dy, y0, x0, height, width

    def edge_at(m: int, n: int) -> bool:
        return bool(mask[n, m]) if x_major else bool(mask[m, n])

    def as_xy(m: int, n: int) -> Point:
        return (m, n) if x_major else (n, m)

    hits: list[Point] = [(x0, y0)]
    ends: list[Point] = []
    for step in (1, -1):
        anchor_m, anchor_n = m0, n0
        m, gap = m0, 0
        while True:
            m += step
            if not 0 <= m < m_len:
                break
            expected = anchor_n + slope * (m - anchor_m)
            base = int(math.floor(expected + 0.5))
            hit = None
            for offset in (0, -1, 1):
                n = base + offset
                if 0 <= n < n_len and edge_at(m, n):
                    hit = n
                    break
            if hit is None:
                gap += 1
                if gap > max_gap:
                    break
                continue
            gap = 0
            anchor_m, anchor_n = m, hit
            hits.append(as_xy(m, hit))
        ends.append(as_xy(anchor_m, anchor_n))
    return ends[0], ends[1], hits


# Segments closer than this in direction may be merged.
_MERGE_ANGLE = math.radians(2.0)


def _fit_segment(xs: np.ndarray, ys: np.ndarray) -> LineSegment | None:
    """Least-squares line through the inliers, cut at the extreme projections."""
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    center = pts.mean(axis=0)
    _, vectors = np.linalg.eigh(np.cov(pts, rowvar=False))
    direction = vectors[:, -1]
    t = (pts - center) @ direction
    p0 = round_half_up(center + direction * t.min()).astype(np.int64)
    p1 = round_half_up(center + direction * t.max()).astype(np.int64)
    if np.array_equal(p0, p1):
        return None
    return LineSegment.through(tuple(p0.tolist()), tuple(p1.tolist()))


def _join(a: LineSegment, b: LineSegment, merge_dist: float, max_gap: int) -> LineSegment | None:
    long, short = (a, b) if a.length >= b.length else (b, a)
    turn = abs(long.theta - short.theta)
    if min(turn, math.pi - turn) > _MERGE_ANGLE:
        return None
    if any(long.distance_to_line(*p) > merge_dist for p in (short.p0, short.p1)):
        return None

    origin = np.asarray(long.p0, dtype=np.float64)
    along = (np.asarray(long.p1, dtype=np.float64) - origin) / long.length
    normal = np.array([math.cos(long.theta), math.sin(long.theta)])
    ends = np.asarray([short.p0, short.p1], dtype=np.float64) - origin
    ts = ends @ along
    if max(ts.min() - long.length, -ts.max(), 0.0) > max_gap:
        return None

    # The merged line sits between the two, weighted by length.
    offset = float((ends @ normal).mean()) * short.length / (long.length + short.length)
    t0, t1 = min(0.0, ts.min()), max(long.length, ts.max())
    p0 = round_half_up(origin + along * t0 + normal * offset).astype(np.int64)
    p1 = round_half_up(origin + along * t1 + normal * offset).astype(np.int64)
    return LineSegment.through(tuple(p0.tolist()), tuple(p1.tolist()))


def _merge_collinear(
    segments: list[LineSegment], merge_dist: float, max_gap: int
) -> list[LineSegment]:
    merged = list(segments)
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                joined = _join(merged[i], merged[j], merge_dist, max_gap)
                if joined is not None:
                    merged[i] = joined
                    del merged[j]
                    changed = True
                    break
            if changed:
                break
    return merged


def hough_segments(
    edges: EdgeMap,
    rho_res: float = 1.0,
    theta_res: float = math.pi / 180,
    votes_min: int = 80,
    min_len: float = 0.0,
    max_gap: int = 10,
    merge_dist: float = 6.0,
    seed: int = 0,
) -> list[LineSegment]:
    """
    Detects line segments with a progressive probabilistic Hough transform.

    Edge pixels vote one at a time in a fixed pseudo-random order. When the
    best bin of the current pixel reaches `votes_min`, the line through the
    pixel is followed in both directions, splitting at gaps longer than
    `max_gap`. A walk that collects at least `votes_min` pixels is fitted with
    a least-squares line; if the fit spans at least `min_len` it becomes a
    segment, and the edge pixels within one pixel of the walk are removed from
    the edge set with their votes withdrawn.

    A painted line has an edge on each flank. Segments that are parallel
    within 2°, lie within `merge_dist` pixels of each other and overlap (or
    leave a gap no longer than `max_gap`) are merged into one.

    Args:
        edges (EdgeMap): The binary edge image.
        rho_res (float): Distance resolution of the accumulator, pixels.
        theta_res (float): Angle resolution of the accumulator, radians.
        votes_min (int): Accumulator threshold and minimum inlier count.
        min_len (float): Minimum segment length, pixels.
        max_gap (int): Longest run of missing pixels bridged inside a segment.
        merge_dist (float): Largest distance between merged parallel segments.
        seed (int): Seed of the voting order; fixed so results are reproducible.

    Raises:
        InvalidParameterError: If a resolution is not positive, votes_min < 1
            or merge_dist < 0.

    Returns:
        list[LineSegment]: Segments in detection order.
    """
    if rho_res <= 0 or theta_res <= 0:
        raise InvalidParameterError("rho_res and theta_res must be positive")
    if votes_min < 1:
        raise InvalidParameterError(f"votes_min must be >= 1, got {votes_min}")
    if merge_dist < 0:
        raise InvalidParameterError(f"merge_dist must be >= 0, got {merge_dist}")

    mask = np.array(edges.bits, dtype=bool)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return []

    height, width = mask.shape
    n_theta = max(1, int(round(math.pi / theta_res)))
    thetas = np.arange(n_theta) * theta_res
    cos_t = np.cos(thetas) / rho_res
    sin_t = np.sin(thetas) / rho_res
    rho_offset = int(math.ceil(math.hypot(width, height) / rho_res)) + 1
    accumulator = np.zeros((n_theta, 2 * rho_offset + 1), dtype=np.int32)
    theta_idx = np.arange(n_theta)
    voted = np.zeros_like(mask)
    corridor = np.ones((3, 3), dtype=bool)

    def rho_bins(x, y):
        return np.rint(np.multiply.outer(x, cos_t) + np.multiply.outer(y, sin_t)).astype(
            np.int64
        ) + rho_offset

    segments: list[LineSegment] = []
    order = np.random.default_rng(seed).permutation(xs.size)
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if not mask[y, x]:
            continue
        bins = rho_bins(x, y)
        accumulator[theta_idx, bins] += 1
        voted[y, x] = True
        votes = accumulator[theta_idx, bins]
        best = int(np.argmax(votes))
        if votes[best] < votes_min:
            continue

        theta = thetas[best]
        end0, end1, hits = _walk(mask, x, y, -math.sin(theta), math.cos(theta), max_gap)
        if end0 == end1 or len(hits) < votes_min:
            continue
        hit_xs = np.fromiter((p[0] for p in hits), dtype=np.int64, count=len(hits))
        hit_ys = np.fromiter((p[1] for p in hits), dtype=np.int64, count=len(hits))
        segment = _fit_segment(hit_xs, hit_ys)
        if segment is None or segment.length < min_len:
            continue

        walked = np.zeros_like(mask)
        walked[hit_ys, hit_xs] = True
        removed = ndimage.binary_dilation(walked, structure=corridor) & mask
        gone_ys, gone_xs = np.nonzero(removed & voted)
        if gone_xs.size:
            withdrawn = rho_bins(gone_xs, gone_ys)
            np.subtract.at(
                accumulator,
                (np.broadcast_to(theta_idx, withdrawn.shape), withdrawn),
                1,
            )
        mask &= ~removed
        voted &= ~removed
        segments.append(segment)

    merged = _merge_collinear(segments, merge_dist, max_gap)
    logger.debug(
        "hough: %d edge pixels -> %d segments (%d after merging)",
        xs.size,
        len(segments),
        len(merged),
    )
    return merged


def convex_hull(points: Iterable[Sequence[int]]) -> ConvexHull:
    """
    Computes the convex hull with Andrew's monotone chain.

    Collinear boundary points are dropped, so the vertex set is unique.

    Args:
        points: Integer (x, y) points; duplicates are allowed.

    Raises:
        DegenerateGeometryError: If no points are given.

    Returns:
        ConvexHull: Counter-clockwise vertices. Collinear input yields its two
            extreme points and a single distinct point yields one vertex.
    """
    pts = sorted({(int(p[0]), int(p[1])) for p in points})
    if not pts:
        raise DegenerateGeometryError("convex hull of an empty point set")
    if len(pts) < 3:
        return ConvexHull(tuple(pts))

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return ConvexHull(tuple(hull))


def hull_bbox(hull: ConvexHull) -> tuple[int, int, int, int]:
    """
    Returns the tightest axis-aligned box (x, y, w, h) around the hull.

    Raises:
        DegenerateGeometryError: If the hull has fewer than 3 vertices.
    """
    if hull.is_degenerate:
        raise DegenerateGeometryError(
            f"hull with {len(hull.vertices)} vertices has no area"
        )
    xs = [p[0] for p in hull.vertices]
    ys = [p[1] for p in hull.vertices]
    return (min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))
