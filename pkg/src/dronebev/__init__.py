"""Multi-drone bird's-eye-view pedestrian detection and tracking.

A geometric pipeline over simulated drone captures: checkerboard PnP
calibration, feature-based homography registration, ground-plane occupancy
fusion, peak detection, a constant-velocity tracker and CLEAR-MOT scoring.
"""

__version__ = "0.1.0"
