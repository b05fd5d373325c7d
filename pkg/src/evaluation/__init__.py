"""Metrics, trial reports and the ablation and mixing-weight experiments."""
