"""Desk-scale laboratory for imaginary time evolution and QITE."""

__version__ = "0.1.0"
