"""
Defines the pydantic models for COCO-format instance-segmentation documents.

These classes map to the three top-level arrays of a COCO document. Each class
represents one record type and each attribute one field of that record. Unknown
fields (for example `info`, `licenses` or per-annotation `attributes`) are kept
so that a parse/serialize round trip does not lose data.

Referential integrity (unique ids, resolvable image and category ids) is checked
by `coco.check_dataset`, not here, so that validation can report every finding
instead of stopping at the first one.
"""

from typing import Annotated, Literal, Optional

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, field_serializer, model_validator


def _check_polygon(values: list[float]) -> list[float]:
    if len(values) < 6:
        raise ValueError(f"polygon needs at least 3 points, got {len(values)} values")
    if len(values) % 2:
        raise ValueError(f"polygon has an odd number of values ({len(values)})")
    return values


Polygon = Annotated[list[float], AfterValidator(_check_polygon)]

SubIdentity = Literal["player", "official", "ball"]


class RleMask(BaseModel):
    """
    Uncompressed COCO run-length mask.

    Runs are taken in column-major order and alternate zeros/ones starting with
    a (possibly empty) run of zeros.
    """

    model_config = ConfigDict(frozen=True)

    size: tuple[Annotated[int, Field(ge=1)], Annotated[int, Field(ge=1)]]
    counts: list[Annotated[int, Field(ge=0)]]

    @model_validator(mode="after")
    def _counts_cover_mask(self):
        height, width = self.size
        if sum(self.counts) != height * width:
            raise ValueError(
                f"RLE counts sum to {sum(self.counts)}, expected {height * width}"
            )
        return self


class CocoImage(BaseModel):
    """Represents one entry of the `images` array."""

    model_config = ConfigDict(frozen=True, extra="allow")

    id: int
    file_name: str
    width: Annotated[int, Field(ge=1)]
    height: Annotated[int, Field(ge=1)]


class CocoCategory(BaseModel):
    """Represents one entry of the `categories` array."""

    model_config = ConfigDict(frozen=True, extra="allow")

    id: int
    name: str
    supercategory: Optional[str] = None


class CocoAnnotation(BaseModel):
    """
    Represents one entry of the `annotations` array.

    `segmentation` is either a list of flat polygons or an RLE mask. Pasted
    objects carry the extra `sub_identity` field, which standard COCO consumers
    ignore.
    """

    model_config = ConfigDict(frozen=True, extra="allow")

    id: int
    image_id: int
    category_id: int
    segmentation: list[Polygon] | RleMask
    bbox: tuple[float, float, float, float]
    area: Annotated[float, Field(ge=0)]
    iscrowd: Literal[0, 1] = 0
    sub_identity: Optional[SubIdentity] = None

    @property
    def is_rle(self) -> bool:
        return isinstance(self.segmentation, RleMask)

    @field_serializer("bbox")
    def _round_bbox(self, bbox: tuple[float, float, float, float]) -> list[float]:
        # COCO convention: two decimals on output, full precision in memory.
        return [round(v, 2) for v in bbox]

    @field_serializer("area")
    def _round_area(self, area: float) -> float:
        return round(area, 2)


class CocoDataset(BaseModel):
    """A parsed COCO document: images, annotations and categories."""

    model_config = ConfigDict(frozen=True, extra="allow")

    images: list[CocoImage] = []
    annotations: list[CocoAnnotation] = []
    categories: list[CocoCategory] = []

    def image_by_id(self) -> dict[int, CocoImage]:
        return {img.id: img for img in self.images}

    def category_names(self) -> dict[int, str]:
        return {cat.id: cat.name for cat in self.categories}

    def annotations_by_image(self) -> dict[int, list[CocoAnnotation]]:
        grouped: dict[int, list[CocoAnnotation]] = {img.id: [] for img in self.images}
        for ann in self.annotations:
            grouped.setdefault(ann.image_id, []).append(ann)
        return grouped
