"""
SVGD Bounds - Stein variational gradient descent with explicit error bounds
Particle transport, Stein discrepancies and a harness that checks the bounds numerically
"""
__version__ = "1.0.0"
