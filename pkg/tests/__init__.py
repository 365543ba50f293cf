"""Test suite for the kdcontrast package."""
