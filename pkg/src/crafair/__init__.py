"""Fairness auditing and fair training for classifiers learned from selection-biased data."""

__version__ = "0.1.0"
