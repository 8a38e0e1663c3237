"""Material laws, grid geometry and the full-order finite-volume model."""
