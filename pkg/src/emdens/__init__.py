"""Cluster-number estimation for multiplex images from density outliers in a
sparse-autoencoder embedding."""

__version__ = "0.1.0"
