"""
LookHere - directional attention masks and position encodings for plain ViTs.
Builds, applies, extrapolates and analyzes patch position encodings.
"""

__version__ = "0.1.0"
