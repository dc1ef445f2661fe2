"""
Main module and entrypoint for the FastAPI application.

This file is responsible for the following:
- Creating the main FastAPI application instance.
- Configuring and adding CORS (Cross-Origin Resource Sharing) middleware.
- Including the court, ROI and dataset routers.
- Defining a root endpoint ("/") for health checks.
"""

import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .config import settings
from .routers import court, dataset, roi


# The service logs through the package logger; its level comes from COURTPRIOR_API_LOG_LEVEL.
logging.getLogger("courtprior").setLevel(settings.log_level.upper())

# Create the main FastAPI application instance
app = FastAPI(
    title="Court Prior API",
    description="Court detection, ROI projection and dataset checks for sports instance segmentation.",
    version=__version__,
)

# Detection results are served to browser tools on any origin.
origins = ["*"]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Court detection, ROI projection and dataset checks each live in their own router
app.include_router(court.router)
app.include_router(roi.router)
app.include_router(dataset.router)


@app.get("/")
def root():
    """
    Health check.

    Returns:
        dict: The service name and version.
    """
    return {"message": "courtprior is running", "version": __version__}
