"""Numerical engine: data, encoders, sanitizers, attacks, consensus."""
