"""Tests for Form-1 parser."""
