"""Semi-supervised dual-modality medical image segmentation toolkit."""

__version__ = "0.1.0"
