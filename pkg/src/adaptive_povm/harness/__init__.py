"""Experiment orchestration, persistence and analysis."""
from .cli import main

__all__ = ["main"]
