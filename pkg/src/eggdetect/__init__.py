"""Selective-autoencoder rare-object detection toolkit.

Trains a small convolutional encoder/decoder to reconstruct only the
target objects in 16x16 image patches, stitches per-patch outputs back
into frame-level activation maps, and scores detections with rare-object
metrics. Includes a synthetic microscopy-style data generator and an HTTP
review service for human-in-the-loop labeling.
"""

__version__ = "0.1.0"
