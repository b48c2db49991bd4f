"""Radar object detection toolkit: clustering, features, recurrent ensemble, metrics."""

__version__ = "0.1.0"
