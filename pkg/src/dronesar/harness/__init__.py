"""Command-line harness: scripted mission runs, the offline advising
pipeline, and the desk-scale evaluation commands."""

from dronesar.harness.cli import main

__all__ = ["main"]
