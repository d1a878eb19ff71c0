"""Test suite for SVGD-Bounds"""
