"""HTTP service wrapping the training laboratory."""

from .app import create_app

__all__ = ["create_app"]
