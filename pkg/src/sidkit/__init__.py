"""Semantic IDs for heterogeneous catalogs, a mixed text/SID token space and catalog-valid decoding."""

__version__ = "0.1.0"
