"""Pose-graph back-end for windowed visual odometry with loop closing."""

__version__ = "0.1.0"
