"""Facial pre-processing: cascaded landmarking, 3D-template frontalization, video matching evaluation."""

__version__ = "0.1.0"
