"""Procedural underwater event-camera simulator.

Pipeline: seeded scene -> ray-cast luminance frames and rock masks -> DVS
event stream -> accumulated event frames -> YOLO dataset, blob detections
and mAP evaluation.
"""

__version__ = "0.1.0"
