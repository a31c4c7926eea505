"""Swimming-quadruped leg force models, planar dynamics and gait optimization."""

__version__ = "0.1.0"
