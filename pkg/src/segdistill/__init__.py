"""Identification networks trained with a removable segmentation teacher-task."""

__version__ = "0.1.0"
