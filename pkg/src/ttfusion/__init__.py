"""Aerial/satellite fusion for land-cover segmentation: data model, I/O,
satellite time-series preparation, the two-branch network, training and
evaluation."""

__version__ = "0.1.0"
