"""Experiment configuration, runs, verification suites and the CLI"""
