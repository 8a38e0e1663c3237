"""Empirical controllability analysis of the reduced model."""
