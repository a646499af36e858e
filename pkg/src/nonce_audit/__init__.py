"""Crawl sites, find nonce-based Content Security Policies and audit how the nonces are used."""

__version__ = "0.1.0"
