"""Simulated tasks, demonstrators, trial execution and the composite learning loop."""
