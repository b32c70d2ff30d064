"""Imbalanced open-set domain adaptation with moving thresholds and
unknown-aware target clustering, at desk scale."""

__version__ = "0.1.0"
