"""Trilevel redispatch game between a DSO and an EV flexibility provider."""

__version__ = "0.1.0"
