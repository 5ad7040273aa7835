"""Fairness-aware synthetic tabular data: three-player GAN pretraining, MI-penalised
bias transform with density-preserving sampling, and rejection-sampled output."""

__version__ = "0.1.0"
