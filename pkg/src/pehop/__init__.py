"""Dual-hop pulmonary-embolism slice classifier with anatomically aware cropping."""

__version__ = "0.1.0"
