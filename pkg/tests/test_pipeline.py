import json
from collections import Counter

import numpy as np
import pytest
from PIL import Image, ImageDraw

from courtprior.coco import check_dataset, parse_coco, transform_under_crop
from courtprior.config import load_config
from courtprior.court import crop_image
from courtprior.errors import ImageLoadError, InvalidParameterError
from courtprior.models import CocoDataset
from courtprior.pipeline import compute_stats, export_roi, run_pipeline, validate, validate_document
from courtprior.schemas import CropRect, ManifestRecord, RectTable, RunManifest
from courtprior.storage import DirectoryImageSource, load_image, read_model

from .conftest import annotation_dict


def load_dataset(doc_path):
    return parse_coco(doc_path.read_bytes())


def output_bytes(out_dir):
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {str(p.relative_to(out_dir)): p.read_bytes() for p in files}


def test_run_pipeline_writes_every_variant(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    config = run_config(seed=1)
    result = run_pipeline(config, load_dataset(doc_path), DirectoryImageSource(img_dir))

    out_dir = config.run.output_dir
    assert len(list((out_dir / "images").glob("*.png"))) == 120
    assert len(result.manifest.records) == 120
    assert result.manifest.failures == []
    assert result.manifest.split == "train"

    written = parse_coco((out_dir / "annotations.json").read_bytes())
    assert written == result.dataset
    assert [img.id for img in written.images] == list(range(1, 121))
    assert [ann.id for ann in written.annotations] == list(range(1, len(written.annotations) + 1))
    assert not [f for f in check_dataset(written) if f.kind == "reference"]

    manifest = read_model(out_dir / "manifest.json", RunManifest)
    assert manifest.records == result.manifest.records
    assert "workers" not in manifest.config["run"]


def test_run_pipeline_output_geometry(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    config = run_config(duplication_factor=2)
    result = run_pipeline(config, load_dataset(doc_path), DirectoryImageSource(img_dir))

    first = result.manifest.records[0]
    assert first.source_file == "court0_frame00.png"
    assert first.output_file == "images/court0_frame00_v00.png"
    assert first.crop_rect.as_tuple() == (6, 7, 83, 49)
    assert first.fallback
    assert first.crop_ratio == pytest.approx(83 * 49 / (96 * 64))

    for image in result.dataset.images:
        assert (image.width, image.height) == (83, 49)
        img = load_image(config.run.output_dir / image.file_name)
        assert (img.width, img.height) == (83, 49)
    for ann in result.dataset.annotations:
        x, y, w, h = ann.bbox
        assert x >= 0 and y >= 0 and x + w <= 83 and y + h <= 49


def test_run_pipeline_records_pastes(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    config = run_config(duplication_factor=2)
    result = run_pipeline(config, load_dataset(doc_path), DirectoryImageSource(img_dir))

    by_image = result.dataset.annotations_by_image()
    for record in result.manifest.records:
        anns = by_image[record.output_image_id]
        pasted = [a for a in anns if a.sub_identity is not None]
        assert len(pasted) == record.paste_count
        assert 0 <= record.paste_count <= 4
        assert sum(record.identity_counts.values()) == len(anns)
    assert sum(r.paste_count for r in result.manifest.records) > 0


def test_run_pipeline_is_deterministic_across_workers(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    dataset = load_dataset(doc_path)
    source = DirectoryImageSource(img_dir)
    single = run_config("single", seed=5, duplication_factor=3, workers=1)
    many = run_config("many", seed=5, duplication_factor=3, workers=8)

    result_single = run_pipeline(single, dataset, source)
    result_many = run_pipeline(many, dataset, source)

    assert output_bytes(single.run.output_dir) == output_bytes(many.run.output_dir)
    assert result_single.manifest.records == result_many.manifest.records
    assert result_single.manifest.config == result_many.manifest.config


def test_run_pipeline_seed_changes_output(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    dataset = load_dataset(doc_path)
    source = DirectoryImageSource(img_dir)
    a = run_config("a", seed=1, duplication_factor=2)
    b = run_config("b", seed=2, duplication_factor=2)
    run_pipeline(a, dataset, source)
    run_pipeline(b, dataset, source)
    assert output_bytes(a.run.output_dir) != output_bytes(b.run.output_dir)


def test_run_pipeline_skips_missing_image(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    (img_dir / "court1_frame04.png").unlink()
    config = run_config(duplication_factor=1)
    result = run_pipeline(config, load_dataset(doc_path), DirectoryImageSource(img_dir))

    assert len(result.manifest.records) == 11
    (failure,) = result.manifest.failures
    assert failure.image_id == 5
    assert failure.file_name == "court1_frame04.png"


def test_run_pipeline_skips_tiny_image(tmp_path, run_config):
    Image.new("RGB", (10, 5)).save(tmp_path / "tiny.png")
    Image.new("RGB", (96, 64), (40, 40, 40)).save(tmp_path / "ok.png")
    doc = {
        "images": [
            {"id": 1, "file_name": "tiny.png", "width": 10, "height": 5},
            {"id": 2, "file_name": "ok.png", "width": 96, "height": 64},
        ],
        "annotations": [],
        "categories": [{"id": 1, "name": "person"}],
    }
    config = run_config(duplication_factor=2)
    result = run_pipeline(config, CocoDataset.model_validate(doc), DirectoryImageSource(tmp_path))
    assert [r.source_image_id for r in result.manifest.records] == [2, 2]
    assert [f.image_id for f in result.manifest.failures] == [1]
    assert all(r.paste_count == 0 for r in result.manifest.records)


def test_run_pipeline_split_name(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    config = run_config(duplication_factor=1)
    result = run_pipeline(config, load_dataset(doc_path), DirectoryImageSource(img_dir), split="val")
    assert result.manifest.split == "val"
    assert {r.split for r in result.manifest.records} == {"val"}


def test_run_pipeline_gridmask(synthetic_dataset, tmp_path):
    doc_path, img_dir = synthetic_dataset
    masked = load_config(
        run={"output_dir": str(tmp_path / "masked"), "seed": 3, "duplication_factor": 1},
        paste={"paste_min": 0, "paste_max": 0},
        gridmask={"prob": 1.0, "unit_range": [8, 8], "ratio_range": [0.5, 0.5]},
    )
    result = run_pipeline(masked, load_dataset(doc_path), DirectoryImageSource(img_dir))
    img = load_image(masked.run.output_dir / result.dataset.images[0].file_name)
    holes = np.all(img.pixels == 114, axis=2)
    assert 0.2 <= holes.mean() <= 0.3


def test_export_roi(tmp_path):
    Image.new("RGB", (1500, 900), (90, 90, 90)).save(tmp_path / "blank.png")
    doc = {
        "images": [{"id": 4, "file_name": "blank.png", "width": 1500, "height": 900}],
        "annotations": [
            annotation_dict(11, 4, 1, 300, 400, 25, 40),
            annotation_dict(12, 4, 1, 10, 10, 20, 20),
        ],
        "categories": [{"id": 1, "name": "person"}],
    }
    config = load_config(run={"output_dir": str(tmp_path / "roi")})
    table, cropped = export_roi(CocoDataset.model_validate(doc), config, DirectoryImageSource(tmp_path))

    (entry,) = table.entries
    assert entry.rect.as_tuple() == (100, 100, 1300, 700)
    assert entry.fallback
    assert entry.rect.area / (entry.width * entry.height) == pytest.approx(0.674, abs=1e-3)
    assert [a.id for a in cropped.annotations] == [11]
    assert cropped.annotations[0].bbox == pytest.approx((200, 300, 25, 40))
    assert cropped.images[0].id == 4

    out_dir = tmp_path / "roi"
    assert read_model(out_dir / "rects.json", RectTable) == table
    roi = load_image(out_dir / "images" / "blank.png")
    assert (roi.width, roi.height) == (1300, 700)


def record(split, image_id, file_name, rect, variant=0, identity_counts=None):
    return ManifestRecord(
        split=split,
        source_image_id=image_id,
        source_file=file_name,
        source_width=100,
        source_height=100,
        variant=variant,
        crop_rect=CropRect(x=0, y=0, w=rect[0], h=rect[1]),
        crop_ratio=rect[0] * rect[1] / 10000,
        fallback=False,
        paste_count=0,
        output_image_id=image_id * 10 + variant,
        output_file=f"images/{file_name}",
        seed=0,
        identity_counts=identity_counts or {},
    )


@pytest.fixture
def manifests():
    train = RunManifest(
        tool_version="0.1.0",
        split="train",
        config={},
        records=[
            record("train", 1, "courtA_001.png", (50, 100), identity_counts={"player": 2}),
            record("train", 1, "courtA_001.png", (50, 100), variant=1, identity_counts={"player": 3}),
            record("train", 2, "courtB_001.png", (80, 100), identity_counts={"official": 1}),
        ],
    )
    test = RunManifest(
        tool_version="0.1.0",
        split="test",
        config={},
        records=[
            record("test", 1, "courtA_002.png", (60, 100)),
            record("test", 2, "misc.png", (100, 100), identity_counts={"ball": 1}),
        ],
    )
    return [train, test]


def test_compute_stats_by_split(manifests):
    report = compute_stats(manifests)
    assert report.grouping == "split"
    means = {g.key: (g.images, g.mean_ratio) for g in report.groups}
    assert means["train"] == (2, pytest.approx(0.65))
    assert means["test"] == (2, pytest.approx(0.8))
    assert report.identity_counts == {"ball": 1, "official": 1, "player": 5}
    assert len(report.images) == 4


def test_compute_stats_by_regex(manifests):
    report = compute_stats(manifests, r"^(court[A-Z])_")
    means = {g.key: (g.images, g.mean_ratio) for g in report.groups}
    assert means == {
        "(unmatched)": (1, pytest.approx(1.0)),
        "courtA": (2, pytest.approx(0.55)),
        "courtB": (1, pytest.approx(0.8)),
    }


def test_compute_stats_rejects_empty():
    with pytest.raises(InvalidParameterError):
        compute_stats(RunManifest(tool_version="0.1.0", split="train", config={}))


def test_compute_stats_rejects_bad_regex(manifests):
    with pytest.raises(InvalidParameterError):
        compute_stats(manifests, "(")


def test_validate_document_clean(coco_bytes):
    report = validate_document(coco_bytes)
    assert report.status == 0
    assert report.findings == []


def test_validate_document_reports_all_findings(coco_doc):
    coco_doc["annotations"].append(annotation_dict(2, 9, 1, 0, 0, 5, 5))
    coco_doc["annotations"].append(annotation_dict(3, 1, 1, 0, 0, 5, 5))
    coco_doc["annotations"][2]["bbox"] = [0, 0, 2, 2]
    report = validate_document(json.dumps(coco_doc))
    assert report.status == 1
    assert {(f.kind, f.annotation_id) for f in report.findings} == {("reference", 2), ("geometry", 3)}


def test_validate_document_schema_error(coco_doc):
    coco_doc["annotations"][0]["segmentation"] = [[1, 2, 3, 4, 5, 6, 7]]
    report = validate_document(json.dumps(coco_doc))
    assert report.status == 1
    assert report.findings[0].kind == "schema"
    assert report.findings[0].annotation_id == 1


def test_validate_document_not_json():
    report = validate_document(b"[1, 2")
    assert [f.kind for f in report.findings] == ["schema"]


def test_validate_missing_file(tmp_path):
    report = validate(tmp_path / "nope.json")
    assert [f.kind for f in report.findings] == ["io"]


def test_directory_source_checks_dimensions(synthetic_dataset):
    doc_path, img_dir = synthetic_dataset
    image = load_dataset(doc_path).images[0].model_copy(update={"width": 50})
    with pytest.raises(ImageLoadError):
        DirectoryImageSource(img_dir)(image)


def test_load_image_rejects_garbage(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"not an image")
    with pytest.raises(ImageLoadError):
        load_image(path)


def test_run_pipeline_without_pastes_writes_plain_crops(synthetic_dataset, tmp_path):
    doc_path, img_dir = synthetic_dataset
    config = load_config(
        run={"output_dir": str(tmp_path / "plain"), "duplication_factor": 1},
        paste={"paste_min": 0, "paste_max": 0},
    )
    dataset = load_dataset(doc_path)
    source = DirectoryImageSource(img_dir)
    result = run_pipeline(config, dataset, source)

    images = dataset.image_by_id()
    by_source = dataset.annotations_by_image()
    by_output = result.dataset.annotations_by_image()
    assert len(result.manifest.records) == 12
    for record in result.manifest.records:
        assert record.paste_count == 0
        original = source(images[record.source_image_id])
        written = load_image(config.run.output_dir / record.output_file)
        assert written == crop_image(original, record.crop_rect)

        expected = [
            transform_under_crop(ann, record.crop_rect, config.crop.min_area)
            for ann in sorted(by_source[record.source_image_id], key=lambda a: a.id)
        ]
        expected = [unnumbered(ann) for ann in expected if ann is not None]
        assert [unnumbered(ann) for ann in by_output[record.output_image_id]] == expected


def unnumbered(ann):
    return ann.model_copy(update={"id": 0, "image_id": 0})


def test_run_pipeline_crops_to_detected_court(tmp_path):
    canvas = Image.new("RGB", (400, 240), (20, 60, 20))
    ImageDraw.Draw(canvas).rectangle([60, 90, 340, 220], outline=(255, 255, 255), width=3)
    canvas.save(tmp_path / "court.png")
    doc = {
        "images": [{"id": 1, "file_name": "court.png", "width": 400, "height": 240}],
        "annotations": [annotation_dict(1, 1, 1, 150, 100, 20, 30)],
        "categories": [{"id": 1, "name": "person"}],
    }
    config = load_config(
        run={"output_dir": str(tmp_path / "out"), "duplication_factor": 1},
        paste={"paste_min": 0, "paste_max": 0},
    )
    result = run_pipeline(config, CocoDataset.model_validate(doc), DirectoryImageSource(tmp_path))

    (rec,) = result.manifest.records
    assert not rec.fallback
    rect = rec.crop_rect
    assert rect.x == 26
    assert abs(rect.y - 39) <= 3
    assert abs(rect.h - 131) <= 3
    (ann,) = result.dataset.annotations
    assert ann.bbox == pytest.approx((150 - rect.x, 100 - rect.y, 20, 30))


def test_run_pipeline_decodes_each_source_once_per_phase(synthetic_dataset, run_config):
    doc_path, img_dir = synthetic_dataset
    source = DirectoryImageSource(img_dir)
    loads = Counter()

    def counting_source(image):
        loads[image.id] += 1
        return source(image)

    config = run_config(duplication_factor=4, workers=1)
    result = run_pipeline(config, load_dataset(doc_path), counting_source)
    assert len(result.manifest.records) == 48
    assert loads == {image_id: 2 for image_id in range(1, 13)}
