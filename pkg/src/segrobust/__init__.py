"""Adversarial robustness evaluation toolkit for toy semantic segmentation."""

__version__ = "0.1.0"
