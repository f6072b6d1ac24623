"""Perturbative gradient training for networks with black-box reservoir stages."""
