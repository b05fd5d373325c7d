"""Sliding-window partitioned graphs and their temporal sequences."""
