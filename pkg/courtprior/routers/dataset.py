"""
Defines the API router for dataset checks and crop statistics.
"""

from typing import List, Optional

from fastapi import APIRouter, File, HTTPException, UploadFile, status

from .. import schemas
from ..errors import InvalidParameterError
from ..pipeline import compute_stats, validate_document


router = APIRouter(prefix="/datasets", tags=["Datasets"])


@router.post("/validate")
async def validate(document: UploadFile = File(...)):
    """
    Checks an uploaded COCO document.

    Returns:
        dict: The findings and the status the `validate` command would exit with.
    """
    report = validate_document(await document.read(), document.filename or "<upload>")
    return {"status": report.status, **report.model_dump(exclude_none=True)}


@router.post("/stats", response_model=schemas.StatsReport)
def stats(manifests: List[schemas.RunManifest], group_regex: Optional[str] = None):
    """
    Computes crop-area ratio statistics over one or more run manifests.

    Raises:
        HTTPException: 422 if there are no records or the regex is invalid.
    """
    try:
        return compute_stats(manifests, group_regex)
    except InvalidParameterError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
