"""Tests for the compositor."""
