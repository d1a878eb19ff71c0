"""Experiment config and result table parsers (JSON, CSV)"""
