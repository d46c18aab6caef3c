"""Easily retrievable NEO finder: Sun-Earth libration point orbit families,
their stable manifolds, catalog pruning and capture-transfer optimization."""

__version__ = "0.1.0"
