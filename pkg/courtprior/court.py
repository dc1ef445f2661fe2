"""
Detects the playing court in a frame and derives the crop rectangle from it.

The detector combines static bounds (fixed fractions of the frame) with a
dynamic bound taken from the convex hull of every Hough segment endpoint found
on the Canny edges. `split_regions` then divides the crop rectangle into a core
interior and an outer band covering a fixed fraction of its area; the band is
where officials stand, the interior is where play happens.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .config import CropParams
from .errors import InvalidImageError, InvalidParameterError
from .imgproc import (
    ConvexHull,
    ImageBuffer,
    LineSegment,
    canny,
    convex_hull,
    hough_segments,
    hull_bbox,
    to_grayscale,
)
from .schemas import CourtRegion, CropRect


logger = logging.getLogger(__name__)

MIN_WIDTH = 15
MIN_HEIGHT = 9


@dataclass(frozen=True)
class CourtDetectionResult:
    """Crop rectangle plus the intermediate geometry it was derived from."""

    rect: CropRect
    bounds: tuple[int, int, int, int]
    segments: tuple[LineSegment, ...]
    hull: Optional[ConvexHull]
    fallback: bool


def _floor_frac(frac: float, size: int) -> int:
    # Tolerance so that e.g. (1/9)·900 floors to 100, not 99.
    return int(math.floor(frac * size + 1e-9))


def static_bounds(width: int, height: int, params: CropParams) -> tuple[int, int, int, int]:
    """
    Computes the static crop bounds of a frame.

    Args:
        width (int): Frame width in pixels.
        height (int): Frame height in pixels.
        params (CropParams): The bound fractions.

    Raises:
        InvalidImageError: If the frame is too small for ordered bounds.

    Returns:
        tuple[int, int, int, int]: (min_h, max_h, min_w, max_w) in pixels.
    """
    if width < MIN_WIDTH or height < MIN_HEIGHT:
        raise InvalidImageError(
            f"image {width}x{height} is below the {MIN_WIDTH}x{MIN_HEIGHT} minimum"
        )
    min_h = _floor_frac(params.h_min_frac, height)
    max_h = _floor_frac(params.h_max_frac, height)
    min_w = _floor_frac(params.w_min_frac, width)
    max_w = _floor_frac(params.w_max_frac, width)
    if min_h >= max_h or min_w >= max_w:
        raise InvalidImageError(f"image {width}x{height} is too small for ordered crop bounds")
    return min_h, max_h, min_w, max_w


def _clamp(
    x: int, y: int, w: int, h: int, left: int, top: int, right: int, bottom: int
) -> CropRect:
    # Origin is moved into [left, right) x [top, bottom), then the size is capped.
    x = min(max(left, x), right - 1)
    y = min(max(top, y), bottom - 1)
    w = max(1, min(w, right - x))
    h = max(1, min(h, bottom - y))
    return CropRect(x=x, y=y, w=w, h=h)


def fallback_rect(width: int, height: int, params: CropParams) -> CropRect:
    """The static-bounds rectangle used when no court lines are found."""
    min_h, max_h, min_w, max_w = static_bounds(width, height, params)
    return CropRect(x=min_w, y=min_h, w=max_w - min_w, h=max_h - min_h)


def crop_rect_from_hull(
    width: int,
    height: int,
    hull_box: tuple[int, int, int, int],
    params: CropParams,
) -> CropRect:
    """
    Applies the crop formula to a hull bounding box.

    `as-written`: (min(min_w, δx), max(min_h, δy) − y_offset, max(min_w, δw),
    min(max_h, δh)), then clamped into the static bounds
    [min_w, max_w) x [min_h, max_h), so the crop never exceeds the static cap.
    `hull-union`: the union of that rectangle with the hull box, where the box
    is extended by one pixel so its last row and column are inside the crop,
    then clamped into the frame only; the whole hull is kept even where it
    leaves the static bounds.

    Args:
        width (int): Frame width.
        height (int): Frame height.
        hull_box (tuple): (δx, δy, δw, δh) of the hull.
        params (CropParams): Bounds, offset and mode.

    Returns:
        CropRect: The clamped crop rectangle.
    """
    min_h, max_h, min_w, max_w = static_bounds(width, height, params)
    dx, dy, dw, dh = hull_box
    x = min(min_w, dx)
    y = max(min_h, dy) - params.y_offset
    w = max(min_w, dw)
    h = min(max_h, dh)
    if params.mode == "as-written":
        return _clamp(x, y, w, h, min_w, min_h, max_w, max_h)

    left = max(0, min(x, dx))
    top = max(0, min(y, dy))
    right = min(width, max(x + w, dx + dw + 1))
    bottom = min(height, max(y + h, dy + dh + 1))
    return _clamp(left, top, right - left, bottom - top, 0, 0, width, height)


def detect_court_details(img: ImageBuffer, params: CropParams) -> CourtDetectionResult:
    """
    Runs court detection and keeps the segments and hull for inspection.

    Raises:
        InvalidImageError: If the image is below the minimum size.
    """
    width, height = img.width, img.height
    bounds = static_bounds(width, height, params)

    gray = to_grayscale(img) if img.channels == 3 else img
    edges = canny(gray, params.canny.low, params.canny.high, params.canny.sigma)
    hough = params.hough
    segments = hough_segments(
        edges,
        rho_res=hough.rho_res,
        theta_res=hough.theta_res,
        votes_min=hough.votes_min,
        min_len=hough.min_len_for(width, height),
        max_gap=hough.max_gap,
        merge_dist=hough.merge_dist,
    )

    hull = None
    if len(segments) >= 2:
        hull = convex_hull([p for seg in segments for p in (seg.p0, seg.p1)])
    if hull is None or hull.is_degenerate:
        logger.debug(
            "court detection fell back to static bounds (%d segments)", len(segments)
        )
        return CourtDetectionResult(
            rect=fallback_rect(width, height, params),
            bounds=bounds,
            segments=tuple(segments),
            hull=hull,
            fallback=True,
        )

    rect = crop_rect_from_hull(width, height, hull_bbox(hull), params)
    return CourtDetectionResult(
        rect=rect, bounds=bounds, segments=tuple(segments), hull=hull, fallback=False
    )


def detect_court(img: ImageBuffer, params: CropParams) -> CropRect:
    """
    Detects the court and returns the crop rectangle.

    Canny edges of the grayscale frame feed the probabilistic Hough transform;
    the convex hull of all segment endpoints gives (δx, δy, δw, δh), which the
    crop formula combines with the static bounds. With fewer than two segments
    or a degenerate hull the static-bounds rectangle is returned instead.

    Args:
        img (ImageBuffer): The frame (1 or 3 channels).
        params (CropParams): Bounds, offset, mode and detector parameters.

    Raises:
        InvalidImageError: If the image is below the minimum size.

    Returns:
        CropRect: A rectangle lying inside the frame.
    """
    return detect_court_details(img, params).rect


def split_regions(rect: CropRect, band_frac: float) -> CourtRegion:
    """
    Splits a rectangle into an interior and a band of `band_frac` of its area.

    The inset t is the nonnegative root of (w − 2t)(h − 2t) = (1 − band_frac)·w·h,
    rounded to the nearest pixel.

    Args:
        rect (CropRect): The court rectangle.
        band_frac (float): Fraction of the area given to the band, in [0, 1].

    Raises:
        InvalidParameterError: If band_frac is outside [0, 1].

    Returns:
        CourtRegion: The split; `interior` is None when it would be empty.
    """
    if not 0.0 <= band_frac <= 1.0:
        raise InvalidParameterError(f"band_frac must lie in [0, 1], got {band_frac}")
    w, h = rect.w, rect.h
    disc = max(0.0, (w + h) ** 2 - 4.0 * band_frac * w * h)
    t = ((w + h) - math.sqrt(disc)) / 4.0
    inset = int(math.floor(t + 0.5))

    inner_w, inner_h = w - 2 * inset, h - 2 * inset
    interior = None
    if band_frac < 1.0 and inner_w > 0 and inner_h > 0:
        interior = CropRect(x=rect.x + inset, y=rect.y + inset, w=inner_w, h=inner_h)
    return CourtRegion(rect=rect, band_frac=band_frac, inset=inset, interior=interior)


def crop_image(img: ImageBuffer, rect: CropRect) -> ImageBuffer:
    """
    Cuts `rect` out of the image.

    Raises:
        InvalidImageError: If the rectangle is not inside the image.
    """
    if rect.right > img.width or rect.bottom > img.height:
        raise InvalidImageError(
            f"rect {rect.as_tuple()} exceeds image {img.width}x{img.height}"
        )
    return ImageBuffer(img.pixels[rect.y : rect.bottom, rect.x : rect.right])


def court_region_for_crop(rect: CropRect, band_frac: float) -> CourtRegion:
    """The region split expressed in the cropped image's own frame."""
    return split_regions(CropRect(x=0, y=0, w=rect.w, h=rect.h), band_frac)


def draw_overlay(img: ImageBuffer, result: CourtDetectionResult) -> np.ndarray:
    """
    Renders the detection on an RGB copy of the frame.

    Segments are red, the hull green, the static bounds blue and the crop rect
    yellow.
    """
    base = img.pixels if img.channels == 3 else np.repeat(img.pixels, 3, axis=2)
    canvas = Image.fromarray(np.ascontiguousarray(base))
    draw = ImageDraw.Draw(canvas)
    min_h, max_h, min_w, max_w = result.bounds
    draw.rectangle([min_w, min_h, max_w, max_h], outline=(0, 0, 255), width=2)
    for seg in result.segments:
        draw.line([seg.p0, seg.p1], fill=(255, 0, 0), width=2)
    if result.hull is not None and len(result.hull.vertices) >= 2:
        draw.polygon(list(result.hull.vertices), outline=(0, 255, 0))
    r = result.rect
    draw.rectangle([r.x, r.y, r.right - 1, r.bottom - 1], outline=(255, 255, 0), width=3)
    return np.asarray(canvas)
