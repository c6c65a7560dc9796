"""Dense per-frame action scoring with joint spatial-downsampling /
temporal-upsampling filters, plus proposal boundary refinement and mAP
evaluation."""

__version__ = "0.1.0"
