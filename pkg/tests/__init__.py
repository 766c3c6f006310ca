"""
Test package for the star-graph BDI toolkit
"""
