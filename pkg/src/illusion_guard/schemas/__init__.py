"""Configuration and result schemas."""
