"""Configuration, persistence and the command-line interface."""
