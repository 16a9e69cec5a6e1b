"""Joint radial distortion and camera auto-calibration from arcs and repeats."""

__version__ = "0.1.0"
