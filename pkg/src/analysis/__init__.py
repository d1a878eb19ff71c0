"""Discrepancies, explicit bounds and the 1-D density surrogate"""
