"""Radargram records, preprocessing and synthetic data."""
