"""LiDAR + camera 3D object detection with fused keypoints and RoI-level fusion."""

__version__ = "0.1.0"
