"""Kernels, targets, particle ensembles and the SVGD transport map"""
