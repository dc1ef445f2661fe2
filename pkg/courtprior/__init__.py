"""Court-aware cropping and copy-paste augmentation for sports instance segmentation."""

__version__ = "0.1.0"
