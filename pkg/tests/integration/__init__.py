"""
Integration tests for the cross-method validation campaign
"""
