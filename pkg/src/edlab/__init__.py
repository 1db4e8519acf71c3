"""Entropic-dynamics simulation lab: fields, walker ensembles and uncertainty diagnostics."""

__version__ = "0.1.0"
