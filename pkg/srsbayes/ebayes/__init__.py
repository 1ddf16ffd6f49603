"""Nonparametric empirical Bayes models for AE-drug signal detection in SRS tables."""
