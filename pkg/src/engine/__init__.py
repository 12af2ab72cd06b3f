"""Numerical core: model, samplers, estimators and file formats."""
