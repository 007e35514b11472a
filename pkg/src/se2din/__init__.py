"""SE(2)-equivariant networks from differential invariants."""

__version__ = "0.1.0"
