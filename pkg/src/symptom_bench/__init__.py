"""Subsystem-level symptom generation for cyber-physical system telemetry."""

__version__ = "0.1.0"
