"""Adaptive contrastive decoding on a synthetic vision-language testbed."""

__version__ = "0.1.0"
