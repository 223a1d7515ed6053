"""Logging, resource checks and report charts."""
