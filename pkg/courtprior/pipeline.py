"""
Runs the dataset-level flow: detect the court, crop, augment, write outputs.

A run has two phases. The first visits every source image once: it detects
the court, maps the annotations into the crop frame and cuts the crop's
objects into the copy-paste pool. The second produces `duplication_factor`
variants per source image, each from its own random stream
`Rng(mix(seed, image id, variant))`, so results do not depend on how work is
spread across worker processes.

Images that cannot be loaded or are too small are recorded in the manifest
and skipped; failing to write output stops the run.
"""

import json
import logging
import math
import re
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .augment import InstancePatch, assign_identity, augment_image, extract_image_instances, grid_mask
from .coco import check_dataset, serialize_coco, transform_under_crop
from .config import AugmentConfig
from .court import court_region_for_crop, crop_image, detect_court_details
from .errors import (
    CocoFormatError,
    DocumentLoadError,
    ImageLoadError,
    InvalidImageError,
    InvalidParameterError,
)
from .imgproc import ImageBuffer
from .models import CocoAnnotation, CocoDataset, CocoImage
from .schemas import (
    CourtRegion,
    CropRect,
    FailureRecord,
    Finding,
    GroupStat,
    ImageRatio,
    ManifestRecord,
    RectEntry,
    RectTable,
    RunManifest,
    StatsReport,
    ValidationReport,
)
from .storage import read_bytes, write_bytes, write_model, write_png
from .utils import Rng, mix_seed


logger = logging.getLogger(__name__)

ImageSource = Callable[[CocoImage], ImageBuffer]

# Per-image problems that skip the image instead of stopping the run.
_SKIPPABLE = (ImageLoadError, InvalidImageError, CocoFormatError)


@dataclass(frozen=True)
class PreparedSource:
    """A source image after court detection, with its annotations in the crop frame."""

    image: CocoImage
    stem: str
    rect: CropRect
    fallback: bool
    region: CourtRegion
    annotations: tuple[CocoAnnotation, ...]


@dataclass(frozen=True)
class _Context:
    config: AugmentConfig
    load_image: ImageSource
    categories: dict[int, str]
    sources: dict[int, PreparedSource]
    pool: tuple[InstancePatch, ...] = ()
    output_dir: Optional[Path] = None


@dataclass(frozen=True)
class _Variant:
    image_id: int
    variant: int
    output_file: str
    seed: int
    annotations: tuple[CocoAnnotation, ...]
    paste_count: int
    identity_counts: dict[str, int]


@dataclass(frozen=True)
class PipelineResult:
    manifest: RunManifest
    dataset: CocoDataset


# --- Work distribution ---

_CONTEXT: Optional[_Context] = None


def _init_worker(context: _Context) -> None:
    global _CONTEXT
    _CONTEXT = context
    _source_crop.cache_clear()


def _map_units(fn: Callable, units: Sequence, context: _Context, workers: int) -> list:
    """Maps `fn` over units, inline or on a process pool sharing `context` read-only."""
    global _CONTEXT
    if workers <= 1 or len(units) <= 1:
        previous, _CONTEXT = _CONTEXT, context
        _source_crop.cache_clear()
        try:
            return [fn(unit) for unit in units]
        finally:
            _CONTEXT = previous
            _source_crop.cache_clear()
    chunksize = max(1, len(units) // (workers * 4))
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(context,)
    ) as pool:
        return list(pool.map(fn, units, chunksize=chunksize))


# --- Phase 1: court detection and pool ---


def _output_stems(images: Iterable[CocoImage]) -> dict[int, str]:
    stems = {img.id: Path(img.file_name).stem for img in images}
    counts = Counter(stems.values())
    return {
        image_id: stem if counts[stem] == 1 else f"{stem}_{image_id}"
        for image_id, stem in stems.items()
    }


def prepare_source(
    image: CocoImage,
    img: ImageBuffer,
    anns: Sequence[CocoAnnotation],
    config: AugmentConfig,
    stem: str = "",
) -> tuple[PreparedSource, ImageBuffer]:
    """
    Detects the court in one image and maps its annotations into the crop.

    Returns:
        tuple[PreparedSource, ImageBuffer]: The prepared source and the crop.
    """
    detection = detect_court_details(img, config.crop)
    rect = detection.rect
    if detection.fallback:
        logger.debug("image %d: static-bounds crop %s", image.id, rect.as_tuple())
    cropped = []
    for ann in sorted(anns, key=lambda a: a.id):
        moved = transform_under_crop(ann, rect, config.crop.min_area)
        if moved is not None:
            cropped.append(moved)
    source = PreparedSource(
        image=image,
        stem=stem or Path(image.file_name).stem,
        rect=rect,
        fallback=detection.fallback,
        region=court_region_for_crop(rect, config.regions.band_frac),
        annotations=tuple(cropped),
    )
    return source, crop_image(img, rect)


def _prepare_unit(unit: tuple[CocoImage, tuple[CocoAnnotation, ...], str]):
    ctx = _CONTEXT
    image, anns, stem = unit
    try:
        img = ctx.load_image(image)
        source, crop = prepare_source(image, img, anns, ctx.config, stem)
    except _SKIPPABLE as exc:
        return FailureRecord(image_id=image.id, file_name=image.file_name, reason=str(exc))
    patches = extract_image_instances(
        crop,
        source.annotations,
        source.region,
        ctx.categories,
        ctx.config.regions,
        ctx.config.paste.min_area,
    )
    return source, patches


# --- Phase 2: variants ---


# Variants of one image are consecutive units, so a small cache decodes each source once.
@lru_cache(maxsize=2)
def _source_crop(image_id: int) -> ImageBuffer:
    source = _CONTEXT.sources[image_id]
    return crop_image(_CONTEXT.load_image(source.image), source.rect)


def _identity_counts(
    anns: Iterable[CocoAnnotation], region: CourtRegion, ctx: _Context
) -> dict[str, int]:
    counts: Counter = Counter()
    for ann in anns:
        if ann.sub_identity is not None:
            counts[ann.sub_identity] += 1
            continue
        try:
            identity = assign_identity(
                ann, region, ctx.categories.get(ann.category_id, ""), ctx.config.regions
            )
        except InvalidParameterError:
            continue
        counts[identity.value] += 1
    return dict(sorted(counts.items()))


def _augment_unit(unit: tuple[int, int]):
    ctx = _CONTEXT
    image_id, variant = unit
    source = ctx.sources[image_id]
    config = ctx.config
    seed = mix_seed(config.run.seed, image_id, variant)
    rng = Rng(seed)
    try:
        img = _source_crop(image_id)
    except _SKIPPABLE as exc:
        return FailureRecord(
            image_id=image_id, file_name=source.image.file_name, reason=f"variant {variant}: {exc}"
        )

    anns = list(source.annotations)
    first_new_id = max((a.id for a in anns), default=0) + 1
    if ctx.pool:
        img, anns = augment_image(img, anns, source.region, ctx.pool, config, rng, image_id=image_id)

    gm = config.gridmask
    if gm.prob > 0 and rng.random() < gm.prob:
        unit_px = int(rng.integers(*gm.unit_range))
        ratio = float(rng.uniform(*gm.ratio_range))
        img = grid_mask(img, unit_px, ratio, rng, gm.fill)

    output_file = f"images/{source.stem}_v{variant:02d}.png"
    write_png(img, ctx.output_dir / output_file)
    return _Variant(
        image_id=image_id,
        variant=variant,
        output_file=output_file,
        seed=seed,
        annotations=tuple(anns),
        paste_count=sum(1 for a in anns if a.id >= first_new_id),
        identity_counts=_identity_counts(anns, source.region, ctx),
    )


def run_pipeline(
    config: AugmentConfig,
    dataset: CocoDataset,
    load_image: ImageSource,
    split: Optional[str] = None,
) -> PipelineResult:
    """
    Runs the full crop-and-augment flow and writes its outputs.

    Writes `images/<stem>_vNN.png`, `annotations.json` and `manifest.json`
    under `config.run.output_dir`. Output image and annotation ids are
    renumbered from 1 in (source image id, variant) order.

    Args:
        config (AugmentConfig): The run configuration.
        dataset (CocoDataset): Source dataset.
        load_image (ImageSource): Loads the pixels of a source image.
        split (str, optional): Split name for the manifest; `config.run.split`
            takes precedence, "train" is the fallback.

    Raises:
        OutputWriteError: If an output file cannot be written.

    Returns:
        PipelineResult: The manifest and the output dataset.
    """
    started = time.perf_counter()
    run = config.run
    split = run.split or split or "train"
    output_dir = Path(run.output_dir)
    context = _Context(
        config=config,
        load_image=load_image,
        categories=dataset.category_names(),
        sources={},
        output_dir=output_dir,
    )

    by_image = dataset.annotations_by_image()
    stems = _output_stems(dataset.images)
    units = [
        (image, tuple(by_image.get(image.id, [])), stems[image.id])
        for image in sorted(dataset.images, key=lambda i: i.id)
    ]
    logger.info("detecting courts in %d images (%d workers)", len(units), run.workers)
    failures: list[FailureRecord] = []
    sources: dict[int, PreparedSource] = {}
    pool: list[InstancePatch] = []
    for outcome in _map_units(_prepare_unit, units, context, run.workers):
        if isinstance(outcome, FailureRecord):
            logger.warning("skipping image %d (%s): %s", outcome.image_id, outcome.file_name, outcome.reason)
            failures.append(outcome)
            continue
        source, patches = outcome
        sources[source.image.id] = source
        pool.extend(patches)
    logger.info("instance pool holds %d objects from %d images", len(pool), len(sources))
    if not pool and config.paste.paste_max > 0:
        logger.warning("instance pool is empty; variants are crops without pastes")

    context = _Context(
        config=config,
        load_image=load_image,
        categories=context.categories,
        sources=sources,
        pool=tuple(pool),
        output_dir=output_dir,
    )
    variant_units = [
        (image_id, variant)
        for image_id in sorted(sources)
        for variant in range(run.duplication_factor)
    ]
    logger.info("augmenting %d variants", len(variant_units))
    variants: list[_Variant] = []
    for outcome in _map_units(_augment_unit, variant_units, context, run.workers):
        if isinstance(outcome, FailureRecord):
            logger.warning("skipping %s: %s", outcome.file_name, outcome.reason)
            failures.append(outcome)
        else:
            variants.append(outcome)
    variants.sort(key=lambda v: (v.image_id, v.variant))

    images, annotations, records = [], [], []
    next_ann_id = 1
    for output_id, var in enumerate(variants, start=1):
        source = sources[var.image_id]
        src, rect = source.image, source.rect
        images.append(CocoImage(id=output_id, file_name=var.output_file, width=rect.w, height=rect.h))
        for ann in sorted(var.annotations, key=lambda a: a.id):
            annotations.append(ann.model_copy(update={"id": next_ann_id, "image_id": output_id}))
            next_ann_id += 1
        records.append(
            ManifestRecord(
                split=split,
                source_image_id=src.id,
                source_file=src.file_name,
                source_width=src.width,
                source_height=src.height,
                variant=var.variant,
                crop_rect=rect,
                crop_ratio=rect.area / (src.width * src.height),
                fallback=source.fallback,
                paste_count=var.paste_count,
                output_image_id=output_id,
                output_file=var.output_file,
                seed=var.seed,
                identity_counts=var.identity_counts,
            )
        )

    output = CocoDataset(images=images, annotations=annotations, categories=list(dataset.categories))
    failures.sort(key=lambda f: (f.image_id, f.reason))
    manifest = RunManifest(
        tool_version=__version__,
        split=split,
        config=config.snapshot(),
        records=records,
        failures=failures,
        wall_time_s=round(time.perf_counter() - started, 3),
    )
    logger.info("writing %d images, %d annotations to %s", len(images), len(annotations), output_dir)
    write_bytes(serialize_coco(output), output_dir / "annotations.json")
    write_model(manifest, output_dir / "manifest.json")
    return PipelineResult(manifest=manifest, dataset=output)


# --- ROI export ---


def export_roi(
    dataset: CocoDataset,
    config: AugmentConfig,
    load_image: ImageSource,
    output_dir: Optional[Path] = None,
) -> tuple[RectTable, CocoDataset]:
    """
    Crops every image to its court without augmentation or duplication.

    Image and annotation ids are kept, so `rects.json` maps each exported
    image straight back to its source frame.

    Args:
        dataset (CocoDataset): Source dataset.
        config (AugmentConfig): Supplies the [crop] and [regions] sections.
        load_image (ImageSource): Loads the pixels of a source image.
        output_dir (Path, optional): Defaults to `config.run.output_dir`.

    Raises:
        OutputWriteError: If an output file cannot be written.

    Returns:
        tuple[RectTable, CocoDataset]: The rect table and the cropped dataset.
    """
    output_dir = Path(output_dir or config.run.output_dir)
    by_image = dataset.annotations_by_image()
    stems = _output_stems(dataset.images)
    entries, images, annotations = [], [], []
    for image in sorted(dataset.images, key=lambda i: i.id):
        try:
            source, crop = prepare_source(
                image, load_image(image), by_image.get(image.id, []), config, stems[image.id]
            )
        except _SKIPPABLE as exc:
            logger.warning("skipping image %d (%s): %s", image.id, image.file_name, exc)
            continue
        roi_file = f"images/{source.stem}.png"
        write_png(crop, output_dir / roi_file)
        rect = source.rect
        entries.append(
            RectEntry(
                image_id=image.id,
                file_name=image.file_name,
                roi_file_name=roi_file,
                width=image.width,
                height=image.height,
                rect=rect,
                fallback=source.fallback,
            )
        )
        images.append(image.model_copy(update={"file_name": roi_file, "width": rect.w, "height": rect.h}))
        annotations.extend(source.annotations)

    table = RectTable(entries=entries)
    cropped = CocoDataset(images=images, annotations=annotations, categories=list(dataset.categories))
    write_bytes(serialize_coco(cropped), output_dir / "annotations.json")
    write_model(table, output_dir / "rects.json")
    logger.info("exported %d regions of interest to %s", len(entries), output_dir)
    return table, cropped


# --- Statistics ---


def compute_stats(
    manifests: RunManifest | Sequence[RunManifest],
    group_regex: Optional[str] = None,
) -> StatsReport:
    """
    Computes crop-area ratios, their group means and identity totals.

    Each source image is counted once per split, however many variants it
    produced. Without `group_regex` images are grouped by split; with it, the
    group key is the regex's first capture group (or whole match) on the
    source file name, and unmatched files fall into "(unmatched)".

    Args:
        manifests: One or more run manifests.
        group_regex (str, optional): Pattern deriving a group key from file names.

    Raises:
        InvalidParameterError: If the manifests hold no records or the regex is invalid.

    Returns:
        StatsReport: Per-group means, per-image ratios and identity counts.
    """
    if isinstance(manifests, RunManifest):
        manifests = [manifests]
    pattern = None
    if group_regex:
        try:
            pattern = re.compile(group_regex)
        except re.error as exc:
            raise InvalidParameterError(f"invalid group regex {group_regex!r}: {exc}") from exc

    ratios: dict[tuple[str, int], ImageRatio] = {}
    identities: Counter = Counter()
    for manifest in manifests:
        for record in manifest.records:
            identities.update(record.identity_counts)
            key = (record.split, record.source_image_id)
            if key in ratios:
                continue
            if pattern is None:
                group = record.split
            else:
                match = pattern.search(record.source_file)
                if match is None:
                    group = "(unmatched)"
                else:
                    group = match.group(1) if match.groups() else match.group(0)
            ratios[key] = ImageRatio(
                split=record.split,
                image_id=record.source_image_id,
                file_name=record.source_file,
                group=group,
                ratio=record.crop_rect.area / (record.source_width * record.source_height),
            )
    if not ratios:
        raise InvalidParameterError("no manifest records to compute statistics from")

    members: dict[str, list[float]] = {}
    for item in ratios.values():
        members.setdefault(item.group, []).append(item.ratio)
    groups = [
        GroupStat(key=key, images=len(values), mean_ratio=math.fsum(values) / len(values))
        for key, values in sorted(members.items())
    ]
    return StatsReport(
        grouping=f"regex:{group_regex}" if pattern is not None else "split",
        groups=groups,
        images=sorted(ratios.values(), key=lambda r: (r.split, r.image_id)),
        identity_counts=dict(sorted(identities.items())),
    )


# --- Validation ---


def _schema_findings(exc: ValidationError, raw) -> list[Finding]:
    findings = []
    annotations = raw.get("annotations") if isinstance(raw, dict) else None
    for error in exc.errors():
        loc = error["loc"]
        ann_id = None
        if len(loc) >= 2 and loc[0] == "annotations" and isinstance(loc[1], int):
            try:
                ann_id = annotations[loc[1]].get("id")
            except (TypeError, IndexError, AttributeError):
                ann_id = None
        where = ".".join(str(part) for part in loc)
        findings.append(
            Finding(
                kind="schema",
                message=f"{where}: {error['msg']}",
                annotation_id=ann_id if isinstance(ann_id, int) else None,
            )
        )
    return findings


def validate_document(text: bytes | str, source: str = "<document>") -> ValidationReport:
    """
    Checks a COCO document and reports every problem found.

    Schema problems stop the check early (cross-record checks need a parsed
    document); otherwise all reference and geometry findings are listed.
    """
    try:
        raw = json.loads(text)
    except ValueError as exc:
        return ValidationReport(
            source=source, findings=[Finding(kind="schema", message=f"not JSON: {exc}")]
        )
    try:
        ds = CocoDataset.model_validate(raw)
    except ValidationError as exc:
        return ValidationReport(source=source, findings=_schema_findings(exc, raw))

    findings = check_dataset(ds)
    logger.info("validated %s: %d findings", source, len(findings))
    return ValidationReport(source=source, findings=findings)


def validate(path: Path) -> ValidationReport:
    """Checks a COCO document file; an unreadable file is reported as an `io` finding."""
    try:
        text = read_bytes(path)
    except DocumentLoadError as exc:
        return ValidationReport(source=str(path), findings=[Finding(kind="io", message=str(exc))])
    return validate_document(text, str(path))
