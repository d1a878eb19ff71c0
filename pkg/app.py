#!/usr/bin/env python3
"""
SVGD Bounds - Main Application Entry Point
Runs experiments, verification suites, n-sweeps and constant printouts.
"""
import sys

from src.harness.cli import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception:
        import traceback
        print("[ERROR] svgd-bounds failed:", file=sys.stderr)
        traceback.print_exc()
        sys.exit(1)
