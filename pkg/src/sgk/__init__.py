"""Finite-step small-gain certification toolkit."""
