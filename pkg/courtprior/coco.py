"""
Operations on COCO instance-segmentation documents.

Parsing and serialization go through the pydantic models in `models.py`;
`check_dataset` adds the cross-record checks (unique ids, resolvable
references, bbox/area consistency) and is reused by `parse_coco`, the
`validate` command and the test suite.

Geometry helpers cover both segmentation encodings: flat polygons are clipped
with Sutherland-Hodgman and measured with the shoelace formula, RLE masks are
decoded, sliced and re-encoded. Coordinates are continuous: pixel (u, v)
covers [u, u+1) x [v, v+1).
"""

import logging
from collections import Counter, defaultdict
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .errors import CocoFormatError, CocoReferenceError, InvalidParameterError
from .models import CocoAnnotation, CocoDataset, RleMask
from .schemas import CropRect, Finding, Prediction
from .utils import mask_bbox, rasterize_polygons


logger = logging.getLogger(__name__)

# Coordinates are stored with two decimals, so checks allow a little slack.
_BBOX_TOLERANCE = 0.01
_ROI_TOLERANCE = 1e-6


# --- Documents ---


def check_dataset(ds: CocoDataset) -> list[Finding]:
    """
    Runs every cross-record check on a parsed dataset.

    Args:
        ds (CocoDataset): The dataset to check.

    Returns:
        list[Finding]: Reference findings (duplicate or dangling ids) followed by
        geometry findings (bbox not enclosing the segmentation, inconsistent or
        zero area). Empty for a valid dataset.
    """
    findings: list[Finding] = []

    def duplicates(ids) -> set[int]:
        seen, dup = set(), set()
        for i in ids:
            (dup if i in seen else seen).add(i)
        return dup

    for image_id in sorted(duplicates(img.id for img in ds.images)):
        findings.append(
            Finding(kind="reference", message=f"duplicate image id {image_id}", image_id=image_id)
        )
    for cat_id in sorted(duplicates(cat.id for cat in ds.categories)):
        findings.append(Finding(kind="reference", message=f"duplicate category id {cat_id}"))
    for ann_id in sorted(duplicates(ann.id for ann in ds.annotations)):
        findings.append(
            Finding(kind="reference", message=f"duplicate annotation id {ann_id}", annotation_id=ann_id)
        )

    images = ds.image_by_id()
    categories = ds.category_names()
    for ann in ds.annotations:
        if ann.image_id not in images:
            findings.append(
                Finding(
                    kind="reference",
                    message=f"annotation {ann.id} references missing image {ann.image_id}",
                    annotation_id=ann.id,
                    image_id=ann.image_id,
                )
            )
        if ann.category_id not in categories:
            findings.append(
                Finding(
                    kind="reference",
                    message=f"annotation {ann.id} references missing category {ann.category_id}",
                    annotation_id=ann.id,
                    image_id=ann.image_id,
                )
            )

    for ann in ds.annotations:
        for message in _geometry_problems(ann, images.get(ann.image_id)):
            findings.append(
                Finding(kind="geometry", message=message, annotation_id=ann.id, image_id=ann.image_id)
            )
    return findings


def _geometry_problems(ann: CocoAnnotation, image) -> list[str]:
    problems = []
    if ann.area <= 0:
        problems.append(f"annotation {ann.id} has nonpositive area {ann.area}")

    x, y, w, h = ann.bbox
    if ann.is_rle:
        rle: RleMask = ann.segmentation
        if image is not None and tuple(rle.size) != (image.height, image.width):
            problems.append(
                f"annotation {ann.id} RLE size {tuple(rle.size)} does not match image "
                f"{image.height}x{image.width}"
            )
        mask = rle_decode(rle)
        measured = float(mask.sum())
        box = mask_bbox(mask)
        if box is not None:
            x0, y0, x1, y1 = box[0], box[1], box[0] + box[2], box[1] + box[3]
        else:
            x0 = y0 = x1 = y1 = None
    else:
        measured = sum(polygon_area(poly) for poly in ann.segmentation)
        xs = [v for poly in ann.segmentation for v in poly[0::2]]
        ys = [v for poly in ann.segmentation for v in poly[1::2]]
        x0, y0, x1, y1 = min(xs), min(ys), max(xs), max(ys)

    if x0 is not None:
        tol = _BBOX_TOLERANCE
        if x0 < x - tol or y0 < y - tol or x1 > x + w + tol or y1 > y + h + tol:
            problems.append(f"annotation {ann.id} bbox {tuple(ann.bbox)} does not enclose its segmentation")

    if abs(measured - ann.area) > max(0.05 * measured, 5.0):
        problems.append(
            f"annotation {ann.id} area {ann.area} disagrees with segmentation area {measured:.2f}"
        )
    return problems


def parse_coco(text: bytes | str) -> CocoDataset:
    """
    Parses and checks a COCO document.

    Args:
        text (bytes | str): The UTF-8 encoded document.

    Raises:
        CocoFormatError: If the document is malformed or violates the schema
            (for example an odd-length polygon).
        CocoReferenceError: If ids are duplicated or an annotation references a
            missing image or category.

    Returns:
        CocoDataset: The parsed dataset.
    """
    try:
        ds = CocoDataset.model_validate_json(text)
    except ValidationError as exc:
        raise CocoFormatError(f"invalid COCO document: {exc}") from exc

    for finding in check_dataset(ds):
        if finding.kind == "reference":
            raise CocoReferenceError(finding.message, annotation_id=finding.annotation_id)

    logger.debug(
        "parsed COCO document: %d images, %d annotations, %d categories",
        len(ds.images),
        len(ds.annotations),
        len(ds.categories),
    )
    return ds


def serialize_coco(ds: CocoDataset) -> bytes:
    """
    Serializes a dataset to UTF-8 JSON.

    Field order follows the model definitions, and bbox and area values are
    rounded to two decimals, so equal datasets always give equal bytes.

    Raises:
        CocoReferenceError: If ids are duplicated or a reference dangles.
        CocoFormatError: If an annotation's bbox or area disagrees with its
            segmentation.
    """
    findings = check_dataset(ds)
    for finding in findings:
        if finding.kind == "reference":
            raise CocoReferenceError(finding.message, annotation_id=finding.annotation_id)
    if findings:
        raise CocoFormatError(f"refusing to write an inconsistent dataset: {findings[0].message}")
    return ds.model_dump_json(exclude_none=True).encode("utf-8")


# --- Polygons ---


def polygon_area(poly: Sequence[float]) -> float:
    """
    Computes the area of a flat [x0, y0, x1, y1, ...] polygon (shoelace formula).

    Raises:
        InvalidParameterError: If the polygon has fewer than 3 points.
    """
    if len(poly) < 6:
        raise InvalidParameterError(f"polygon needs at least 3 points, got {len(poly) // 2}")
    coords = np.asarray(poly, dtype=np.float64)
    xs, ys = coords[0::2], coords[1::2]
    return float(abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))) / 2.0)


def _clip_edge(points, inside, intersect):
    out = []
    if not points:
        return out
    prev = points[-1]
    prev_in = inside(prev)
    for cur in points:
        cur_in = inside(cur)
        if cur_in:
            if not prev_in:
                out.append(intersect(prev, cur))
            out.append(cur)
        elif prev_in:
            out.append(intersect(prev, cur))
        prev, prev_in = cur, cur_in
    return out


def _at_x(edge: float):
    def intersect(p, q):
        t = (edge - p[0]) / (q[0] - p[0])
        return (edge, p[1] + t * (q[1] - p[1]))

    return intersect


def _at_y(edge: float):
    def intersect(p, q):
        t = (edge - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), edge)

    return intersect


def _axis_pieces(p, q, points):
    # Splits an axis-parallel edge at every ring vertex lying on it.
    if p[0] == q[0]:
        axis, other = 1, 0
    elif p[1] == q[1]:
        axis, other = 0, 1
    else:
        return [(p, q)]
    lo, hi = sorted((p[axis], q[axis]))
    stops = sorted({v[axis] for v in points if v[other] == p[other] and lo < v[axis] < hi})
    if p[axis] > q[axis]:
        stops.reverse()
    chain = [p]
    for s in stops:
        chain.append((s, p[1]) if axis == 0 else (p[0], s))
    chain.append(q)
    return list(zip(chain, chain[1:]))


def _split_rings(points) -> list[list[tuple[float, float]]]:
    """
    Separates the pieces of a clipped ring.

    Sutherland-Hodgman joins the pieces of a concave polygon with zero-width
    bridges running along the window sides. Edge pieces traversed once in each
    direction cancel; what is left is chained back into closed rings, taking at
    every vertex the outgoing edge that comes next in the original order.
    """
    edges = []
    for i, p in enumerate(points):
        q = points[(i + 1) % len(points)]
        if p != q:
            edges.extend(_axis_pieces(p, q, points))

    budget = Counter(edges)
    for a, b in list(budget):
        both = min(budget[(a, b)], budget[(b, a)])
        budget[(a, b)] -= both
        budget[(b, a)] -= both
    kept = []
    for edge in edges:
        if budget[edge] > 0:
            budget[edge] -= 1
            kept.append(edge)

    outgoing = defaultdict(list)
    for k, (a, _) in enumerate(kept):
        outgoing[a].append(k)
    used = [False] * len(kept)
    rings = []
    for first in range(len(kept)):
        if used[first]:
            continue
        ring, k = [], first
        while True:
            used[k] = True
            a, b = kept[k]
            ring.append(a)
            if b == kept[first][0]:
                break
            options = [j for j in outgoing[b] if not used[j]]
            if not options:
                break
            k = min(options, key=lambda j, k=k: (j - k) % len(kept))
        rings.append(ring)
    return rings


def clip_polygon(poly: Sequence[float], rect: CropRect) -> list[list[float]]:
    """
    Clips a flat polygon to a rectangle (Sutherland-Hodgman).

    A concave polygon can fall apart into several pieces inside the window;
    each piece is returned as its own polygon.

    Args:
        poly: Flat [x0, y0, x1, y1, ...] vertex list.
        rect (CropRect): The clip window.

    Returns:
        list[list[float]]: The clipped polygons, or [] when nothing with
        positive area remains.
    """
    points = [(float(poly[i]), float(poly[i + 1])) for i in range(0, len(poly) - 1, 2)]
    left, top, right, bottom = float(rect.x), float(rect.y), float(rect.right), float(rect.bottom)

    points = _clip_edge(points, lambda p: p[0] >= left, _at_x(left))
    points = _clip_edge(points, lambda p: p[0] <= right, _at_x(right))
    points = _clip_edge(points, lambda p: p[1] >= top, _at_y(top))
    points = _clip_edge(points, lambda p: p[1] <= bottom, _at_y(bottom))

    if len(points) < 3:
        return []
    pieces = []
    for ring in _split_rings(points):
        if len(ring) < 3:
            continue
        flat = [v for p in ring for v in p]
        if polygon_area(flat) > 0.0:
            pieces.append(flat)
    return pieces


def _polygons_bbox(polygons: list[list[float]]) -> tuple[float, float, float, float]:
    xs = [v for poly in polygons for v in poly[0::2]]
    ys = [v for poly in polygons for v in poly[1::2]]
    return (min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


# --- RLE ---


def rle_encode(mask) -> RleMask:
    """
    Run-length encodes a binary mask in column-major order.

    The first run counts zeros (it is 0 when the first pixel is set); interior
    runs are never empty.

    Raises:
        InvalidParameterError: If the mask is not 2-D or has an empty dimension.
    """
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidParameterError(f"cannot encode mask of shape {arr.shape}")
    flat = arr.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(size=arr.shape, counts=counts)


def rle_decode(rle: RleMask) -> np.ndarray:
    """
    Decodes an RLE mask into a boolean (height, width) array.

    Raises:
        CocoFormatError: If the counts do not sum to height x width.
    """
    height, width = rle.size
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.sum() != height * width:
        raise CocoFormatError(f"RLE counts sum to {counts.sum()}, expected {height * width}")
    values = np.arange(counts.size) % 2 == 1
    return np.repeat(values, counts).reshape((height, width), order="F")


def annotation_mask(ann: CocoAnnotation, height: int, width: int) -> np.ndarray:
    """
    Rasterizes an annotation's segmentation in its image frame.

    Raises:
        CocoFormatError: If an RLE segmentation has a different size.
    """
    if ann.is_rle:
        if tuple(ann.segmentation.size) != (height, width):
            raise CocoFormatError(
                f"annotation {ann.id} RLE size {tuple(ann.segmentation.size)} "
                f"does not match {height}x{width}"
            )
        return rle_decode(ann.segmentation)
    return rasterize_polygons(ann.segmentation, height, width)


def with_mask(ann: CocoAnnotation, mask: np.ndarray, **update) -> Optional[CocoAnnotation]:
    """
    Returns a copy of `ann` whose segmentation is `mask` as RLE.

    The bbox is the tight box of the mask and the area its pixel count. Returns
    None for an empty mask.
    """
    box = mask_bbox(mask)
    if box is None:
        return None
    update.update(
        segmentation=rle_encode(mask),
        bbox=tuple(float(v) for v in box),
        area=float(np.count_nonzero(mask)),
    )
    return ann.model_copy(update=update)


# --- Frame changes ---


def transform_under_crop(
    ann: CocoAnnotation, rect: CropRect, min_area: float
) -> Optional[CocoAnnotation]:
    """
    Maps an annotation into the frame of a crop.

    Polygons are clipped to `rect` and translated by (-rect.x, -rect.y); RLE
    masks are decoded, cut to `rect` and re-encoded at the crop size. The bbox
    and area are recomputed from the result.

    Args:
        ann (CocoAnnotation): Annotation in the source frame.
        rect (CropRect): The crop rectangle in the source frame.
        min_area (float): Results smaller than this are dropped.

    Returns:
        Optional[CocoAnnotation]: The transformed annotation, or None when it
        falls (almost) entirely outside the crop.
    """
    if ann.is_rle:
        source = rle_decode(ann.segmentation)
        cut = np.zeros((rect.h, rect.w), dtype=bool)
        part = source[rect.y : rect.bottom, rect.x : rect.right]
        cut[: part.shape[0], : part.shape[1]] = part
        if np.count_nonzero(cut) < max(min_area, 1):
            return None
        return with_mask(ann, cut)

    polygons = []
    for poly in ann.segmentation:
        for clipped in clip_polygon(poly, rect):
            coords = np.asarray(clipped, dtype=np.float64)
            coords[0::2] = np.clip(coords[0::2] - rect.x, 0.0, rect.w)
            coords[1::2] = np.clip(coords[1::2] - rect.y, 0.0, rect.h)
            polygons.append(coords.tolist())
    if not polygons:
        return None
    area = sum(polygon_area(poly) for poly in polygons)
    if area < min_area or area <= 0.0:
        return None
    return ann.model_copy(
        update={"segmentation": polygons, "bbox": _polygons_bbox(polygons), "area": area}
    )


def _check_in_roi(xs: np.ndarray, ys: np.ndarray, rect: CropRect) -> None:
    tol = _ROI_TOLERANCE
    if xs.min() < -tol or ys.min() < -tol or xs.max() > rect.w + tol or ys.max() > rect.h + tol:
        raise InvalidParameterError(
            f"geometry exceeds the {rect.w}x{rect.h} region of interest"
        )


def project_back(geom: Sequence[float], rect: CropRect) -> list[float]:
    """
    Translates ROI-frame geometry into the original frame.

    Args:
        geom: Either a bbox (x, y, w, h) or a flat polygon with at least 3 points.
        rect (CropRect): The crop rectangle the ROI was cut from.

    Raises:
        InvalidParameterError: If the geometry lies outside the ROI or has an
            invalid number of values.

    Returns:
        list[float]: The geometry shifted by (rect.x, rect.y).
    """
    coords = np.asarray(geom, dtype=np.float64)
    if coords.size == 4:
        x, y, w, h = coords
        if w < 0 or h < 0:
            raise InvalidParameterError(f"bbox has negative size: {tuple(coords)}")
        _check_in_roi(np.array([x, x + w]), np.array([y, y + h]), rect)
        return [float(x + rect.x), float(y + rect.y), float(w), float(h)]

    if coords.size < 6 or coords.size % 2:
        raise InvalidParameterError(f"expected a bbox or a polygon, got {coords.size} values")
    _check_in_roi(coords[0::2], coords[1::2], rect)
    coords[0::2] += rect.x
    coords[1::2] += rect.y
    return coords.tolist()


def _pad_rle(rle: RleMask, rect: CropRect, width: int, height: int) -> RleMask:
    roi = rle_decode(rle)
    if roi.shape != (rect.h, rect.w):
        raise InvalidParameterError(
            f"RLE size {roi.shape} does not match the {rect.h}x{rect.w} region of interest"
        )
    if rect.right > width or rect.bottom > height:
        raise InvalidParameterError(f"rect {rect.as_tuple()} exceeds frame {width}x{height}")
    full = np.zeros((height, width), dtype=bool)
    full[rect.y : rect.bottom, rect.x : rect.right] = roi
    return rle_encode(full)


def project_prediction(
    pred: Prediction,
    rect: CropRect,
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> Prediction:
    """
    Projects an ROI-frame prediction into the original frame.

    Bboxes and polygons are translated; RLE masks are padded into a
    width x height frame, so both must be known for RLE predictions.

    Raises:
        InvalidParameterError: If the geometry exceeds the ROI, or an RLE
            prediction is given without the original frame size.
    """
    update = {}
    if pred.bbox is not None:
        update["bbox"] = tuple(project_back(pred.bbox, rect))
    seg = pred.segmentation
    if isinstance(seg, RleMask):
        if width is None or height is None:
            raise InvalidParameterError("RLE predictions need the original frame size")
        update["segmentation"] = _pad_rle(seg, rect, width, height)
    elif seg is not None:
        update["segmentation"] = [project_back(poly, rect) for poly in seg]
    return pred.model_copy(update=update)
