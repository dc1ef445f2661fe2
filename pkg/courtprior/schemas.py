"""
Defines the Pydantic models (schemas) shared across the package.

These schemas are used for:
1.  Court geometry: the crop rectangle and its interior/boundary-band split.
2.  Run records: the manifest written next to every pipeline output, the ROI
    rect table, and the crop-ratio statistics report.
3.  Request and response bodies of the HTTP service.

COCO document records live in `models.py`.
"""

from typing import Annotated, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from .models import RleMask


# --- Court Geometry ---


class CropRect(BaseModel):
    """Axis-aligned pixel rectangle; covers columns x..x+w-1 and rows y..y+h-1."""

    model_config = ConfigDict(frozen=True)

    x: Annotated[int, Field(ge=0)]
    y: Annotated[int, Field(ge=0)]
    w: Annotated[int, Field(ge=1)]
    h: Annotated[int, Field(ge=1)]

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def contains_point(self, px: float, py: float) -> bool:
        """Closed containment in continuous coordinates."""
        return self.x <= px <= self.right and self.y <= py <= self.bottom

    def contains_rect(self, other: "CropRect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.right <= self.right
            and other.bottom <= self.bottom
        )


class CourtRegion(BaseModel):
    """
    A crop rectangle split into a core interior and an outer decision band.

    The band is the set difference `rect - interior`; `interior` is None when
    the inset swallows the whole rectangle. A point on the interior's edge
    belongs to the band.
    """

    model_config = ConfigDict(frozen=True)

    rect: CropRect
    band_frac: Annotated[float, Field(ge=0.0, le=1.0)]
    inset: Annotated[int, Field(ge=0)]
    interior: Optional[CropRect] = None

    @property
    def interior_area(self) -> int:
        return self.interior.area if self.interior is not None else 0

    @property
    def band_area(self) -> int:
        return self.rect.area - self.interior_area

    def in_interior(self, px: float, py: float) -> bool:
        inner = self.interior
        if inner is None:
            return False
        return inner.x < px < inner.right and inner.y < py < inner.bottom

    def in_band(self, px: float, py: float) -> bool:
        return self.rect.contains_point(px, py) and not self.in_interior(px, py)

    def band_rects(self) -> list[CropRect]:
        """Disjoint rectangles whose union is the band."""
        rect, inner = self.rect, self.interior
        if inner is None:
            return [rect]
        pieces = [
            (rect.x, rect.y, rect.w, inner.y - rect.y),
            (rect.x, inner.bottom, rect.w, rect.bottom - inner.bottom),
            (rect.x, inner.y, inner.x - rect.x, inner.h),
            (inner.right, inner.y, rect.right - inner.right, inner.h),
        ]
        return [CropRect(x=x, y=y, w=w, h=h) for x, y, w, h in pieces if w > 0 and h > 0]


class SegmentOut(BaseModel):
    x0: int
    y0: int
    x1: int
    y1: int
    theta: float
    rho: float


class CourtDetection(BaseModel):
    """Response schema for a court detection, with the intermediate geometry."""

    rect: CropRect
    fallback: bool
    static_bounds: tuple[int, int, int, int]
    region: CourtRegion
    segments: list[SegmentOut]
    hull: list[tuple[int, int]]


# --- Run Records ---


class ManifestRecord(BaseModel):
    """One output image of a pipeline run."""

    split: str
    source_image_id: int
    source_file: str
    source_width: int
    source_height: int
    variant: int
    crop_rect: CropRect
    crop_ratio: Annotated[float, Field(gt=0.0, le=1.0)]
    fallback: bool
    paste_count: int
    output_image_id: int
    output_file: str
    seed: int
    identity_counts: dict[str, int] = {}


class FailureRecord(BaseModel):
    """A source image that was skipped, and why."""

    image_id: int
    file_name: str
    reason: str


class RunManifest(BaseModel):
    """Reproducibility record of one pipeline run."""

    tool_version: str
    split: str
    config: dict
    records: list[ManifestRecord] = []
    failures: list[FailureRecord] = []
    wall_time_s: Optional[float] = None


class RectEntry(BaseModel):
    """Maps an exported ROI image back to its source frame."""

    image_id: int
    file_name: str
    roi_file_name: str
    width: int
    height: int
    rect: CropRect
    fallback: bool = False


class RectTable(BaseModel):
    entries: list[RectEntry] = []

    def by_image_id(self) -> dict[int, RectEntry]:
        return {entry.image_id: entry for entry in self.entries}


# --- Statistics ---


class ImageRatio(BaseModel):
    split: str
    image_id: int
    file_name: str
    group: str
    ratio: float


class GroupStat(BaseModel):
    key: str
    images: int
    mean_ratio: float


class StatsReport(BaseModel):
    """Crop-area ratio statistics, grouped by split or by a file-name-derived key."""

    grouping: str
    groups: list[GroupStat]
    images: list[ImageRatio]
    identity_counts: dict[str, int]


# --- Validation ---


class Finding(BaseModel):
    kind: Literal["schema", "reference", "geometry", "io"]
    message: str
    annotation_id: Optional[int] = None
    image_id: Optional[int] = None


class ValidationReport(BaseModel):
    source: str
    findings: list[Finding] = []

    @property
    def status(self) -> int:
        return 1 if self.findings else 0


# --- Predictions (ROI inference) ---


class Prediction(BaseModel):
    """A COCO-results style prediction; unknown fields such as `score` pass through."""

    model_config = ConfigDict(extra="allow")

    image_id: int
    category_id: int
    bbox: Optional[tuple[float, float, float, float]] = None
    segmentation: Optional[list[list[float]] | RleMask] = None


class ProjectBackRequest(BaseModel):
    """Schema for projecting ROI-frame predictions into the original frame."""

    rect: CropRect
    width: Optional[int] = None
    height: Optional[int] = None
    predictions: list[Prediction]
