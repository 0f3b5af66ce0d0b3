"""Configuration, datasets, experiment orchestration, reports and the CLI."""
