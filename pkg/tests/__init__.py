"""Tests package for Pixel Knight."""

