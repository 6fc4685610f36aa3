"""Desk-scale visual-inertial odometry with learned scheduling and fusion."""

__version__ = "0.1.0"
