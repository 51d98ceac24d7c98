"""Experiment grid, reporting and command line entry point."""
