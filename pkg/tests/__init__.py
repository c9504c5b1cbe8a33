"""Tests for feed backend."""
