"""Optimiser, schedules and the training loop."""
