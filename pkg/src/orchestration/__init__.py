"""Run configuration and the command-line pipeline."""
