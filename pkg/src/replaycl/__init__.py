"""Replay-based continual learning with instance loss weighting and uncertainty-guided acquisition."""
__version__ = "0.1.0"
