from __future__ import annotations


class SflowError(Exception):
    """Base class for every error raised inside the sflow package."""
