"""Tests for the vmsns package."""
