"""Speech-act gesture triggering and motion retargeting for a 12-joint humanoid."""

__version__ = "0.1.0"
