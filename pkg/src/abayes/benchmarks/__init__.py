"""Benchmark models with reference posteriors."""
