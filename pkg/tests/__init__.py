"""Tests for sizemorph."""
