"""
Identity-conditioned augmentation: style transforms, GridMask and copy-paste.

Every annotated person is given an identity from where it stands on the court:
feet inside the core interior make a player, feet in the outer band (or off
the court) make an official. Balls are their own identity. Players get a
colour transform (RGB curves and a hue rotation); officials and balls get
salt-and-pepper noise and a brightness change.

Copy-paste draws styled instances from a pool cut out of the dataset and
pastes each one at a location that suits its identity: players and balls into
the interior, officials into the band. The pasted object is frontmost, so every
earlier annotation loses the pasted pixels and is dropped once too little of
it stays visible.

All randomness comes from the `Rng` passed in, so a seed fully determines the
output.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color

from .coco import annotation_mask, with_mask
from .config import AugmentConfig, RegionConfig, StyleConfig
from .court import split_regions
from .errors import InvalidImageError, InvalidParameterError
from .imgproc import ImageBuffer
from .models import CocoAnnotation, CocoDataset, CocoImage
from .schemas import CourtRegion, CropRect
from .utils import Rng, mask_bbox, rasterize_polygons, round_half_up


logger = logging.getLogger(__name__)

Curve = Sequence[Sequence[tuple[float, float]]]


class Identity(str, enum.Enum):
    PLAYER = "player"
    REFEREE_OR_COACH = "official"
    BALL = "ball"


# --- Identity ---


def assign_identity(
    ann: CocoAnnotation,
    region: CourtRegion,
    category_name: str,
    config: RegionConfig = RegionConfig(),
) -> Identity:
    """
    Decides the identity of an annotated object from its category and position.

    The anchor is the bottom-center of the bbox (the feet of a person). A person
    whose anchor lies strictly inside the interior is a player; on the interior
    edge, in the band or outside the court it is an official.

    Args:
        ann (CocoAnnotation): The annotation, in the same frame as `region`.
        region (CourtRegion): Interior/band split of the court.
        category_name (str): Name of the annotation's category.
        config (RegionConfig): The person and ball category names.

    Raises:
        InvalidParameterError: If the category is neither a person nor a ball.

    Returns:
        Identity: The object's identity.
    """
    name = category_name.strip().lower()
    if name in {c.lower() for c in config.ball_categories}:
        return Identity.BALL
    if name not in {c.lower() for c in config.person_categories}:
        raise InvalidParameterError(f"unknown category {category_name!r}")

    x, y, w, h = ann.bbox
    if region.in_interior(x + w / 2.0, y + h):
        return Identity.PLAYER
    return Identity.REFEREE_OR_COACH


# --- Style operations ---


def _curve_lut(points: Sequence[tuple[float, float]]) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise InvalidParameterError("a curve needs at least two (input, output) points")
    xs, ys = pts[:, 0], pts[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise InvalidParameterError(f"curve inputs must increase: {xs.tolist()}")
    steps = np.diff(ys)
    if np.any(steps < 0) and np.any(steps > 0):
        raise InvalidParameterError(f"curve is not monotone: {ys.tolist()}")
    lut = np.interp(np.arange(256, dtype=np.float64), xs, ys)
    return np.clip(round_half_up(lut), 0, 255).astype(np.uint8)


def rgb_curve(patch: ImageBuffer, curve: Curve) -> ImageBuffer:
    """
    Remaps every channel through a piecewise-linear tone curve.

    Args:
        patch (ImageBuffer): Input pixels.
        curve: One list of (input, output) control points per channel, or a
            single list applied to every channel.

    Raises:
        InvalidParameterError: If a curve is not monotone or the channel count
            does not match.

    Returns:
        ImageBuffer: The remapped pixels.
    """
    channels = patch.channels
    if len(curve) == 1:
        curve = list(curve) * channels
    if len(curve) != channels:
        raise InvalidParameterError(f"got {len(curve)} curves for {channels} channels")
    out = np.empty_like(patch.pixels)
    for c, points in enumerate(curve):
        out[..., c] = _curve_lut(points)[patch.pixels[..., c]]
    return ImageBuffer(out)


def hue_shift(patch: ImageBuffer, degrees: float) -> ImageBuffer:
    """
    Rotates the hue of an RGB patch.

    Raises:
        InvalidImageError: If the patch is not 3-channel.
    """
    if patch.channels != 3:
        raise InvalidImageError(f"hue_shift needs 3 channels, got {patch.channels}")
    if math.fmod(degrees, 360.0) == 0.0:
        return patch
    hsv = color.rgb2hsv(patch.pixels)
    hsv[..., 0] = np.mod(hsv[..., 0] + degrees / 360.0, 1.0)
    rgb = color.hsv2rgb(hsv)
    return ImageBuffer(np.clip(round_half_up(rgb * 255.0), 0, 255).astype(np.uint8))


def salt_pepper(patch: ImageBuffer, density: float, rng: Rng) -> ImageBuffer:
    """
    Replaces each pixel with black or white with probability `density`.

    All channels of a hit pixel get the same value.

    Raises:
        InvalidParameterError: If density lies outside [0, 1].
    """
    if not 0.0 <= density <= 1.0:
        raise InvalidParameterError(f"density must lie in [0, 1], got {density}")
    shape = (patch.height, patch.width)
    hit = rng.random(shape) < density
    value = (rng.integers(0, 1, size=shape) * 255).astype(np.uint8)
    out = patch.pixels.copy()
    out[hit] = value[hit][:, None]
    return ImageBuffer(out)


def brightness(patch: ImageBuffer, factor: float) -> ImageBuffer:
    """Scales every sample by `factor`, rounding half up and clamping to [0, 255]."""
    if factor <= 0:
        raise InvalidParameterError(f"brightness factor must be positive, got {factor}")
    scaled = round_half_up(patch.pixels.astype(np.float64) * factor)
    return ImageBuffer(np.clip(scaled, 0, 255).astype(np.uint8))


def grid_mask(
    img: ImageBuffer, unit: int, ratio: float, rng: Rng, fill: int = 114
) -> ImageBuffer:
    """
    Covers the image with a periodic grid of square holes.

    Holes have side round(unit * ratio), repeat every `unit` pixels in both
    directions and start at a random phase. Hole pixels are set to `fill`.

    Raises:
        InvalidParameterError: If unit < 2 or ratio lies outside [0, 1).
    """
    if unit < 2:
        raise InvalidParameterError(f"grid unit must be at least 2, got {unit}")
    if not 0.0 <= ratio < 1.0:
        raise InvalidParameterError(f"grid ratio must lie in [0, 1), got {ratio}")
    side = int(round_half_up(unit * ratio))
    off_x, off_y = (int(v) for v in rng.integers(0, unit - 1, size=2))
    if side == 0:
        return img
    cols = np.mod(np.arange(img.width) - off_x, unit) < side
    rows = np.mod(np.arange(img.height) - off_y, unit) < side
    out = img.pixels.copy()
    out[np.outer(rows, cols)] = fill
    return ImageBuffer(out)


# --- Instances ---


@dataclass(frozen=True, eq=False)
class InstancePatch:
    """An object cut out of a source image, ready to be styled and pasted."""

    pixels: ImageBuffer
    mask: np.ndarray
    identity: Identity
    source: tuple[int, int]
    category_id: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.pixels.height, self.pixels.width):
            raise InvalidParameterError(
                f"mask {mask.shape} does not match pixels {self.pixels.height}x{self.pixels.width}"
            )
        if not mask.any():
            raise InvalidParameterError(f"empty mask for instance {self.source}")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return self.pixels.width

    @property
    def height(self) -> int:
        return self.pixels.height

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    def replace(self, pixels: ImageBuffer, mask: Optional[np.ndarray] = None) -> "InstancePatch":
        return InstancePatch(
            pixels=pixels,
            mask=self.mask if mask is None else mask,
            identity=self.identity,
            source=self.source,
            category_id=self.category_id,
        )


@dataclass(frozen=True)
class StyleParams:
    """One concrete draw of style parameters for one object."""

    rgb_curve: tuple[tuple[tuple[float, float], ...], ...]
    hue_shift: float
    sp_density: float
    brightness: float

    @classmethod
    def identity(cls, channels: int = 3) -> "StyleParams":
        """Parameters under which `apply_style` changes nothing."""
        curve = tuple(((0.0, 0.0), (255.0, 255.0)) for _ in range(channels))
        return cls(rgb_curve=curve, hue_shift=0.0, sp_density=0.0, brightness=1.0)


def _sample_curve(rng: Rng, config: StyleConfig) -> tuple[tuple[float, float], ...]:
    xs = np.linspace(0.0, 255.0, config.curve_points)
    ys = xs + rng.uniform(-config.curve_jitter, config.curve_jitter, size=xs.size)
    ys[0] = rng.uniform(0.0, config.endpoint_jitter)
    ys[-1] = 255.0 - rng.uniform(0.0, config.endpoint_jitter)
    ys = np.maximum.accumulate(np.clip(ys, 0.0, 255.0))
    return tuple((float(x), float(y)) for x, y in zip(xs, ys))


def sample_style(identity: Identity, rng: Rng, config: StyleConfig, channels: int = 3) -> StyleParams:
    """
    Draws style parameters from the configured ranges.

    Every field is drawn whatever the identity, so the number of random draws
    per object is fixed.
    """
    curve = tuple(_sample_curve(rng, config) for _ in range(channels))
    return StyleParams(
        rgb_curve=curve,
        hue_shift=float(rng.uniform(*config.hue_range)),
        sp_density=float(rng.uniform(*config.sp_density_range)),
        brightness=float(rng.uniform(*config.brightness_range)),
    )


def apply_style(patch: InstancePatch, rng: Rng, params: StyleParams) -> InstancePatch:
    """
    Applies the identity's style transform to the pixels inside the mask.

    Players get the RGB curves followed by the hue rotation (3-channel patches
    only); officials and balls get salt-and-pepper noise followed by the
    brightness factor. The mask is returned unchanged.
    """
    if patch.identity is Identity.PLAYER:
        styled = rgb_curve(patch.pixels, params.rgb_curve[: patch.pixels.channels])
        if styled.channels == 3:
            styled = hue_shift(styled, params.hue_shift)
    else:
        styled = salt_pepper(patch.pixels, params.sp_density, rng)
        styled = brightness(styled, params.brightness)
    out = np.where(patch.mask[:, :, None], styled.pixels, patch.pixels.pixels)
    return patch.replace(ImageBuffer(out))


def rescale_patch(patch: InstancePatch, factor: float) -> Optional[InstancePatch]:
    """Resizes a patch (bilinear pixels, nearest mask); None if nothing is left."""
    width = max(1, int(round_half_up(patch.width * factor)))
    height = max(1, int(round_half_up(patch.height * factor)))
    pixels = patch.pixels.pixels
    if pixels.shape[2] == 1:
        resized = np.asarray(Image.fromarray(pixels[:, :, 0]).resize((width, height), Image.BILINEAR))
    else:
        resized = np.asarray(Image.fromarray(pixels).resize((width, height), Image.BILINEAR))
    mask = Image.fromarray(patch.mask.astype(np.uint8) * 255).resize((width, height), Image.NEAREST)
    mask = np.asarray(mask) > 0
    if not mask.any():
        return None
    return patch.replace(ImageBuffer.from_array(resized), mask)


def extract_image_instances(
    img: ImageBuffer,
    anns: Sequence[CocoAnnotation],
    region: CourtRegion,
    category_names: Mapping[int, str],
    config: RegionConfig = RegionConfig(),
    min_area: float = 16.0,
) -> list[InstancePatch]:
    """
    Cuts one patch per non-crowd annotation out of one image.

    Annotations whose category is neither a person nor a ball, or whose mask
    is smaller than `min_area`, are skipped.
    """
    patches = []
    for ann in sorted(anns, key=lambda a: a.id):
        if ann.iscrowd:
            continue
        name = category_names.get(ann.category_id, "")
        try:
            identity = assign_identity(ann, region, name, config)
        except InvalidParameterError:
            logger.debug("annotation %d: category %r is not pooled", ann.id, name)
            continue

        x, y, w, h = ann.bbox
        x0, y0 = max(0, math.floor(x)), max(0, math.floor(y))
        x1, y1 = min(img.width, math.ceil(x + w)), min(img.height, math.ceil(y + h))
        if x1 <= x0 or y1 <= y0:
            continue
        if ann.is_rle:
            mask = annotation_mask(ann, img.height, img.width)[y0:y1, x0:x1]
        else:
            mask = rasterize_polygons(ann.segmentation, y1 - y0, x1 - x0, origin=(x0, y0))
        if np.count_nonzero(mask) < max(min_area, 1):
            continue
        patches.append(
            InstancePatch(
                pixels=ImageBuffer(img.pixels[y0:y1, x0:x1]),
                mask=mask,
                identity=identity,
                source=(ann.image_id, ann.id),
                category_id=ann.category_id,
            )
        )
    return patches


def extract_instances(
    ds: CocoDataset,
    load_image: Callable[[CocoImage], ImageBuffer],
    regions: Optional[Mapping[int, CourtRegion]] = None,
    config: RegionConfig = RegionConfig(),
    min_area: float = 16.0,
) -> list[InstancePatch]:
    """
    Builds the copy-paste pool from a dataset.

    Args:
        ds (CocoDataset): Source dataset.
        load_image (Callable): Returns the pixels of a dataset image; raises
            `ImageLoadError` for a missing file.
        regions (Mapping, optional): Court region per image id, in that image's
            frame. Images without one use the whole frame split by
            `config.band_frac`.
        config (RegionConfig): Category names and band fraction.
        min_area (float): Smallest mask, in pixels, that enters the pool.

    Returns:
        list[InstancePatch]: Patches ordered by (image id, annotation id).
    """
    regions = regions or {}
    names = ds.category_names()
    by_image = ds.annotations_by_image()
    pool: list[InstancePatch] = []
    for image in sorted(ds.images, key=lambda i: i.id):
        anns = by_image.get(image.id, [])
        if not anns:
            continue
        region = regions.get(image.id) or split_regions(
            CropRect(x=0, y=0, w=image.width, h=image.height), config.band_frac
        )
        pool.extend(
            extract_image_instances(load_image(image), anns, region, names, config, min_area)
        )
    return pool


# --- Copy-paste ---


def _target_rects(identity: Identity, region: CourtRegion) -> list[CropRect]:
    if identity is Identity.REFEREE_OR_COACH:
        return region.band_rects()
    return [region.interior] if region.interior is not None else []


def _anchor_ok(identity: Identity, region: CourtRegion, ax: float, ay: float) -> bool:
    if identity is Identity.REFEREE_OR_COACH:
        return region.in_band(ax, ay)
    return region.in_interior(ax, ay)


def sample_paste_location(
    identity: Identity,
    region: CourtRegion,
    patch: InstancePatch,
    rng: Rng,
    *,
    image_size: Optional[tuple[int, int]] = None,
    occupied: Optional[np.ndarray] = None,
    max_attempts: int = 50,
) -> Optional[tuple[int, int]]:
    """
    Picks the top-left corner at which to paste a patch.

    The anchor (bottom-center of the pasted mask's bbox) is drawn uniformly over
    the interior for players and balls and over the band for officials.
    Candidates are rejected when the anchor misses its target after rounding,
    when the patch would leave the image, or when it would cover `occupied`
    pixels.

    Args:
        identity (Identity): Decides the target area.
        region (CourtRegion): The court split, in image coordinates.
        patch (InstancePatch): The patch to place.
        rng (Rng): Random stream.
        image_size (tuple[int, int], optional): (width, height) of the image;
            defaults to the court rect's far corner.
        occupied (np.ndarray, optional): Pixels earlier pastes already cover.
        max_attempts (int): Candidates to try before giving up.

    Returns:
        Optional[tuple[int, int]]: (x, y) of the patch's top-left pixel, or None.
    """
    targets = _target_rects(identity, region)
    if not targets:
        return None
    width, height = image_size or (region.rect.right, region.rect.bottom)
    mx, my, mw, mh = mask_bbox(patch.mask)
    weights = np.cumsum([r.area for r in targets], dtype=np.float64)

    for _ in range(max_attempts):
        pick = int(np.searchsorted(weights, rng.random() * weights[-1], side="right"))
        target = targets[min(pick, len(targets) - 1)]
        ax = target.x + rng.random() * target.w
        ay = target.y + rng.random() * target.h
        left = int(math.floor(ax - mx - mw / 2.0 + 0.5))
        top = int(math.floor(ay - my - mh + 0.5))
        if left < 0 or top < 0 or left + patch.width > width or top + patch.height > height:
            continue
        if not _anchor_ok(identity, region, left + mx + mw / 2.0, top + my + mh):
            continue
        if occupied is not None:
            window = occupied[top : top + patch.height, left : left + patch.width]
            if np.any(window & patch.mask):
                continue
        return left, top
    return None


def paste_instance(
    img: ImageBuffer,
    anns: Sequence[CocoAnnotation],
    patch: InstancePatch,
    loc: tuple[int, int],
    *,
    image_id: int,
    visibility_min: float = 0.1,
    reference_areas: Optional[dict[int, float]] = None,
    feather_px: int = 0,
) -> tuple[ImageBuffer, list[CocoAnnotation]]:
    """
    Pastes a patch and updates the annotations for the occlusion it causes.

    The masked patch pixels overwrite the image (blended over `feather_px`
    pixels from the mask edge when feathering is on). A new RLE annotation with
    the next free id and the patch's `sub_identity` is appended. Every earlier
    annotation loses the pasted pixels; it is removed when what remains is
    below `visibility_min` of its reference area, otherwise its segmentation
    becomes the remaining mask.

    Args:
        img (ImageBuffer): Host image.
        anns (Sequence[CocoAnnotation]): Annotations of the host image.
        patch (InstancePatch): Patch to paste, same channel count as `img`.
        loc (tuple[int, int]): Top-left (x, y) of the patch in the image.
        image_id (int): Image id recorded on the new annotation.
        visibility_min (float): Fraction of the reference area a survivor keeps.
        reference_areas (dict, optional): Area of each annotation before any
            paste into this image. Missing entries are measured now and stored.
        feather_px (int): Width of the blend ramp; 0 pastes a hard mask.

    Raises:
        InvalidParameterError: If the patch does not fit at `loc`.
        InvalidImageError: If the channel counts differ.

    Returns:
        tuple[ImageBuffer, list[CocoAnnotation]]: The new image and annotations.
    """
    left, top = loc
    if left < 0 or top < 0 or left + patch.width > img.width or top + patch.height > img.height:
        raise InvalidParameterError(
            f"patch {patch.width}x{patch.height} at {loc} exceeds image {img.width}x{img.height}"
        )
    if patch.pixels.channels != img.channels:
        raise InvalidImageError(
            f"patch has {patch.pixels.channels} channels, image has {img.channels}"
        )

    out = img.pixels.copy()
    window = out[top : top + patch.height, left : left + patch.width]
    src = patch.pixels.pixels
    if feather_px > 0:
        # Pad so the patch border counts as background for the distance transform.
        dist = ndimage.distance_transform_edt(np.pad(patch.mask, 1))[1:-1, 1:-1]
        alpha = np.clip(dist / feather_px, 0.0, 1.0)[:, :, None]
        blended = alpha * src + (1.0 - alpha) * window
        window[...] = np.clip(round_half_up(blended), 0, 255).astype(np.uint8)
    else:
        window[patch.mask] = src[patch.mask]

    pasted = np.zeros((img.height, img.width), dtype=bool)
    pasted[top : top + patch.height, left : left + patch.width] = patch.mask

    if reference_areas is None:
        reference_areas = {}
    survivors: list[CocoAnnotation] = []
    for ann in anns:
        mask = annotation_mask(ann, img.height, img.width)
        reference = reference_areas.setdefault(ann.id, float(np.count_nonzero(mask)))
        if not np.any(mask & pasted):
            survivors.append(ann)
            continue
        remaining = mask & ~pasted
        if np.count_nonzero(remaining) < visibility_min * reference:
            logger.debug("annotation %d occluded by pasted %s", ann.id, patch.source)
            continue
        updated = with_mask(ann, remaining)
        if updated is not None:
            survivors.append(updated)

    next_id = max((a.id for a in anns), default=0) + 1
    template = CocoAnnotation(
        id=next_id,
        image_id=image_id,
        category_id=patch.category_id,
        segmentation=[],
        bbox=(0.0, 0.0, 0.0, 0.0),
        area=0.0,
        iscrowd=0,
        sub_identity=patch.identity.value,
    )
    survivors.append(with_mask(template, pasted))
    return ImageBuffer(out), survivors


def augment_image(
    img: ImageBuffer,
    anns: Sequence[CocoAnnotation],
    region: CourtRegion,
    pool: Sequence[InstancePatch],
    config: AugmentConfig,
    rng: Rng,
    *,
    image_id: Optional[int] = None,
) -> tuple[ImageBuffer, list[CocoAnnotation]]:
    """
    Styles and pastes a random number of pool instances into one image.

    The paste count is drawn uniformly from [paste_min, paste_max]. Each paste
    picks a pool patch, draws and applies its style, optionally rescales it
    and pastes it at a sampled location; patches without a legal location
    are skipped.

    Args:
        img (ImageBuffer): Host image (the court crop).
        anns (Sequence[CocoAnnotation]): Its annotations, in the crop frame.
        region (CourtRegion): Court split in the crop frame.
        pool (Sequence[InstancePatch]): Source patches.
        config (AugmentConfig): Style and paste settings.
        rng (Rng): The image's random stream.
        image_id (int, optional): Id for pasted annotations; defaults to the
            first annotation's image id.

    Raises:
        InvalidParameterError: If a paste is requested from an empty pool.

    Returns:
        tuple[ImageBuffer, list[CocoAnnotation]]: Augmented image and annotations.
    """
    paste = config.paste
    count = int(rng.integers(paste.paste_min, paste.paste_max))
    anns = list(anns)
    if count == 0:
        return img, anns
    if not pool:
        raise InvalidParameterError("cannot paste from an empty instance pool")
    if image_id is None:
        image_id = anns[0].image_id if anns else 0

    reference_areas: dict[int, float] = {}
    occupied = None if paste.allow_overlap else np.zeros((img.height, img.width), dtype=bool)
    for _ in range(count):
        patch = pool[int(rng.integers(0, len(pool) - 1))]
        params = sample_style(patch.identity, rng, config.style, patch.pixels.channels)
        patch = apply_style(patch, rng, params)
        if paste.scale_jitter:
            patch = rescale_patch(patch, float(rng.uniform(*paste.scale_range)))
            if patch is None:
                continue
        loc = sample_paste_location(
            patch.identity,
            region,
            patch,
            rng,
            image_size=(img.width, img.height),
            occupied=occupied,
            max_attempts=paste.max_attempts,
        )
        if loc is None:
            logger.debug("no legal location for %s patch %s", patch.identity.value, patch.source)
            continue
        img, anns = paste_instance(
            img,
            anns,
            patch,
            loc,
            image_id=image_id,
            visibility_min=paste.visibility_min,
            reference_areas=reference_areas,
            feather_px=paste.feather_px,
        )
        if occupied is not None:
            left, top = loc
            occupied[top : top + patch.height, left : left + patch.width] |= patch.mask
    return img, anns
