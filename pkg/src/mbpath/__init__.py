"""Integrative two-stage debiased Lasso inference for microbiome-metabolome-disease pathways."""

__version__ = "0.1.0"
