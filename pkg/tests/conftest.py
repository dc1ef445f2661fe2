import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image, ImageDraw

from courtprior.augment import Identity, InstancePatch
from courtprior.config import CropParams, RegionConfig, load_config
from courtprior.court import split_regions
from courtprior.imgproc import ImageBuffer
from courtprior.main import app
from courtprior.schemas import CropRect
from courtprior.storage import get_crop_params, get_region_config


def rect_polygon(x, y, w, h):
    return [x, y, x + w, y, x + w, y + h, x, y + h]


def annotation_dict(ann_id, image_id, category_id, x, y, w, h):
    return {
        "id": ann_id,
        "image_id": image_id,
        "category_id": category_id,
        "segmentation": [rect_polygon(x, y, w, h)],
        "bbox": [x, y, w, h],
        "area": w * h,
        "iscrowd": 0,
    }


@pytest.fixture
def step_image():
    pixels = np.zeros((64, 64), dtype=np.uint8)
    pixels[:, 32:] = 255
    return ImageBuffer.from_array(pixels)


@pytest.fixture
def court_frame():
    """1500x900 frame with a white court outline spanning (200, 300)-(1200, 800)."""
    canvas = Image.new("RGB", (1500, 900), (0, 0, 0))
    ImageDraw.Draw(canvas).rectangle([200, 300, 1200, 800], outline=(255, 255, 255), width=3)
    return ImageBuffer(np.asarray(canvas))


@pytest.fixture
def blank_frame():
    return ImageBuffer(np.full((900, 1500, 3), 90, dtype=np.uint8))


@pytest.fixture
def coco_doc():
    return {
        "images": [{"id": 1, "file_name": "frame_0001.png", "width": 100, "height": 80}],
        "annotations": [annotation_dict(1, 1, 1, 10, 10, 20, 30)],
        "categories": [{"id": 1, "name": "person"}],
    }


@pytest.fixture
def coco_bytes(coco_doc):
    return json.dumps(coco_doc).encode("utf-8")


@pytest.fixture
def region():
    """100x100 court: inset 5, interior (5, 5, 90, 90)."""
    return split_regions(CropRect(x=0, y=0, w=100, h=100), 0.2)


@pytest.fixture
def make_patch():
    def _make_patch(w, h, identity=Identity.PLAYER, value=200, mask=None, category_id=1, channels=3):
        pixels = np.full((h, w, channels), value, dtype=np.uint8)
        if mask is None:
            mask = np.ones((h, w), dtype=bool)
        return InstancePatch(
            pixels=ImageBuffer(pixels),
            mask=mask,
            identity=identity,
            source=(1, 1),
            category_id=category_id,
        )

    return _make_patch


def _draw_frame(path, index):
    canvas = Image.new("RGB", (96, 64), (30, 120, 30))
    draw = ImageDraw.Draw(canvas)
    draw.rectangle([20 + index, 20, 29 + index, 39], fill=(200, 40, 40))
    draw.rectangle([60, 25, 67, 40], fill=(20, 20, 20))
    draw.rectangle([45, 40, 50, 45], fill=(240, 140, 0))
    canvas.save(path)


@pytest.fixture
def synthetic_dataset(tmp_path):
    """Twelve 96x64 frames, each with two persons and a ball."""
    img_dir = tmp_path / "frames"
    img_dir.mkdir()
    images, annotations = [], []
    ann_id = 1
    for i in range(12):
        image_id = i + 1
        name = f"court{i % 3}_frame{i:02d}.png"
        _draw_frame(img_dir / name, i)
        images.append({"id": image_id, "file_name": name, "width": 96, "height": 64})
        for category_id, box in ((1, (20 + i, 20, 10, 20)), (1, (60, 25, 8, 16)), (2, (45, 40, 6, 6))):
            annotations.append(annotation_dict(ann_id, image_id, category_id, *box))
            ann_id += 1
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person"}, {"id": 2, "name": "ball"}],
    }
    doc_path = tmp_path / "train.json"
    doc_path.write_text(json.dumps(doc))
    return doc_path, img_dir


@pytest.fixture
def run_config(tmp_path):
    def _run_config(name="out", **run):
        return load_config(run={"output_dir": str(tmp_path / name), **run})

    return _run_config


@pytest.fixture()
def client():
    app.dependency_overrides[get_crop_params] = lambda: CropParams()
    app.dependency_overrides[get_region_config] = lambda: RegionConfig()
    yield TestClient(app)
    app.dependency_overrides.clear()
