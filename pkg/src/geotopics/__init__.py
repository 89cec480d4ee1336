"""Unsupervised geo-semantic topic discovery over geotagged post corpora."""

__version__ = "0.1.0"
