"""Optimal heating schedules on the reduced model."""
