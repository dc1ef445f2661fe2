"""
Defines the API router for region-of-interest inference support.

A model that ran on a court crop reports its predictions in the crop's frame;
this router maps them back onto the original frame.
"""

from typing import List

from fastapi import APIRouter, HTTPException, status

from .. import schemas
from ..coco import project_prediction
from ..errors import InvalidParameterError


router = APIRouter(prefix="/roi", tags=["ROI"])


@router.post("/project-back", response_model=List[schemas.Prediction], response_model_exclude_none=True)
def project_back(request: schemas.ProjectBackRequest):
    """
    Projects ROI-frame predictions into the original frame.

    Bboxes and polygons are shifted by the crop offset; RLE masks are padded
    to `width` x `height`, which the request must then carry.

    Raises:
        HTTPException: 422 if a prediction lies outside the ROI or an RLE
            prediction comes without the frame size.
    """
    try:
        return [
            project_prediction(pred, request.rect, request.width, request.height)
            for pred in request.predictions
        ]
    except InvalidParameterError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
