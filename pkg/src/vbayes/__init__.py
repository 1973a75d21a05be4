"""Variational Bayes for Gaussian mixtures and blind source separation,
with posteriors over the number of components or sources."""

__version__ = "0.1.0"
