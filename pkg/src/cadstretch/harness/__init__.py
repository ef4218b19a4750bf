"""Synthetic experiments, the end-to-end pipeline and the command line."""
