"""Desk-scale laboratory for DNS forwarder cache-poisoning attacks."""

__version__ = "0.1.0"
