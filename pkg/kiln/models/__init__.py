"""Proper orthogonal decomposition and the Galerkin reduced-order model."""
