"""Cross-platform inertial odometry: platform routing, attention-based
displacement regression with uncertainty, and error-state EKF fusion."""

__version__ = "0.1.0"
