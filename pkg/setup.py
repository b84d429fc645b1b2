"""Setup script for vmsns (fallback for older pip)."""

from setuptools import setup

setup()
