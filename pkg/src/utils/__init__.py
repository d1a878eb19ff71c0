"""Errors, numeric helpers and report export"""
