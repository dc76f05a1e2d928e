"""Desk-scale analytic toolkit for Drinfeld modular forms of arbitrary rank."""

__version__ = "0.1.0"
