"""Tests for isspcert."""
