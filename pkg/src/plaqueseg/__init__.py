"""Carotid plaque segmentation pipeline."""
