"""Hierarchically structured hidden Markov models for multi-scale time series."""
