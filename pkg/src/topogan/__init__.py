"""Topology-optimization ground truths, a conditional image-to-image GAN
trained on them, and physics-based scoring of generated geometries."""

__version__ = "0.1.0"
