"""Tests for tqnn."""
