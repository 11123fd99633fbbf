"""Adaptive scheduling of concurrent packet-processing apps on heterogeneous devices."""

__version__ = "0.1.0"
