"""Test suite for the GP causal panel package."""
