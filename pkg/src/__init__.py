"""Pointalign: Bayesian alignment of unlabelled point configurations."""
