"""
Defines the API router for court detection.

Clients upload a frame and receive the crop rectangle together with the
interior/band split and the detected geometry, so that inference can run on
the court region only.
"""

from fastapi import APIRouter, Depends, File, HTTPException, UploadFile, status

from .. import schemas
from ..config import CropParams, RegionConfig
from ..court import detect_court_details, split_regions
from ..errors import ImageLoadError, InvalidImageError, InvalidParameterError
from ..storage import decode_image, get_crop_params, get_region_config


router = APIRouter(prefix="/court", tags=["Court"])


@router.post("/detect", response_model=schemas.CourtDetection)
async def detect(
    image: UploadFile = File(...),
    params: CropParams = Depends(get_crop_params),
    regions: RegionConfig = Depends(get_region_config),
):
    """
    Detects the court in an uploaded frame.

    Args:
        image (UploadFile): The encoded frame (PNG, JPEG, ...).
        params (CropParams): Detection parameters from the service config.
        regions (RegionConfig): Supplies the band fraction.

    Raises:
        HTTPException: 400 if the upload cannot be decoded, 422 if the frame is
            too small for court detection.

    Returns:
        schemas.CourtDetection: Crop rect, region split, segments and hull.
    """
    try:
        img = decode_image(await image.read(), image.filename or "<upload>")
    except ImageLoadError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))

    try:
        result = detect_court_details(img, params)
    except InvalidImageError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))

    return schemas.CourtDetection(
        rect=result.rect,
        fallback=result.fallback,
        static_bounds=result.bounds,
        region=split_regions(result.rect, regions.band_frac),
        segments=[
            schemas.SegmentOut(
                x0=s.p0[0], y0=s.p0[1], x1=s.p1[0], y1=s.p1[1], theta=s.theta, rho=s.rho
            )
            for s in result.segments
        ],
        hull=list(result.hull.vertices) if result.hull is not None else [],
    )


@router.post("/split", response_model=schemas.CourtRegion)
def split(rect: schemas.CropRect, band_frac: float = 0.2):
    """Splits a court rectangle into its interior and a band of `band_frac` of its area."""
    try:
        return split_regions(rect, band_frac)
    except InvalidParameterError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
