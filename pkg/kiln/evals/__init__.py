"""Error metrics and reduced-versus-full model validation."""
