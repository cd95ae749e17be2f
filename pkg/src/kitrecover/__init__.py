"""Anomaly introspection and task-level recovery for manipulation skills."""

__version__ = "0.1.0"
