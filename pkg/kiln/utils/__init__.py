"""Logging, configuration and helper utilities."""
