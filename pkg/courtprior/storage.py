"""
Handles reading and writing of images and JSON documents.

Images are decoded with Pillow and always handed out as 3-channel RGB
`ImageBuffer`s; outputs are written as PNG so augmentation artifacts are never
mixed with compression artifacts. This module also provides the dependencies
the HTTP routers use to get their crop and region parameters.
"""

import io
import logging
from functools import lru_cache
from pathlib import Path
from typing import Type, TypeVar

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ValidationError

from .config import AugmentConfig, CropParams, RegionConfig, load_config, settings
from .errors import DocumentLoadError, ImageLoadError, OutputWriteError
from .imgproc import ImageBuffer
from .models import CocoImage


logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


# --- Images ---


def decode_image(data: bytes, name: str = "<upload>") -> ImageBuffer:
    """
    Decodes an encoded image (PNG, JPEG, ...) into RGB.

    Raises:
        ImageLoadError: If Pillow cannot decode the bytes.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            return ImageBuffer(np.asarray(im.convert("RGB")))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageLoadError(f"cannot decode image {name}: {exc}") from exc


def load_image(path: Path) -> ImageBuffer:
    """
    Loads an image file as RGB.

    Raises:
        ImageLoadError: If the file is missing or cannot be decoded.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc
    return decode_image(data, str(path))


def encode_png(img: ImageBuffer) -> bytes:
    pixels = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def write_png(img: ImageBuffer, path: Path) -> None:
    """Writes an image as PNG, creating parent directories."""
    write_bytes(encode_png(img), path)


class DirectoryImageSource:
    """
    Loads dataset images by resolving `file_name` against a root directory.

    Instances are picklable, so they can be shipped to worker processes.
    """

    def __init__(self, root: Path):
        self.root = Path(root)

    def __repr__(self) -> str:
        return f"DirectoryImageSource({str(self.root)!r})"

    def path_for(self, image: CocoImage) -> Path:
        return self.root / image.file_name

    def __call__(self, image: CocoImage) -> ImageBuffer:
        img = load_image(self.path_for(image))
        if (img.width, img.height) != (image.width, image.height):
            raise ImageLoadError(
                f"{image.file_name} is {img.width}x{img.height}, "
                f"the dataset says {image.width}x{image.height}"
            )
        return img


# --- Documents ---


def read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DocumentLoadError(f"cannot read {path}: {exc}") from exc


def write_bytes(data: bytes, path: Path) -> None:
    """
    Writes bytes to a file, creating parent directories.

    Raises:
        OutputWriteError: If the directory or file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise OutputWriteError(f"cannot write {path}: {exc}") from exc


def read_model(path: Path, model: Type[ModelT]) -> ModelT:
    """
    Reads a JSON document into a pydantic model.

    Raises:
        DocumentLoadError: If the file is unreadable or does not match the model.
    """
    try:
        return model.model_validate_json(read_bytes(path))
    except ValidationError as exc:
        raise DocumentLoadError(f"{path} is not a valid {model.__name__}: {exc}") from exc


def write_model(document: BaseModel, path: Path) -> None:
    """Writes a pydantic model as indented JSON."""
    write_bytes(document.model_dump_json(indent=2, exclude_none=True).encode("utf-8"), path)


# --- Service dependencies ---


@lru_cache
def get_service_config() -> AugmentConfig:
    """Loads the run config named by the service settings, once per process."""
    config = load_config(settings.config_file)
    logger.info("service config loaded from %s", settings.config_file or "defaults")
    return config


def get_crop_params() -> CropParams:
    """
    FastAPI dependency that provides the court detection parameters.

    Returns:
        CropParams: The [crop] section of the service's run config.
    """
    return get_service_config().crop


def get_region_config() -> RegionConfig:
    """FastAPI dependency that provides the [regions] section of the service's run config."""
    return get_service_config().regions
