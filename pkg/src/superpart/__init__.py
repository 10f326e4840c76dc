"""Supervised point cloud oversegmentation with learned local embeddings."""

__version__ = "0.1.0"
