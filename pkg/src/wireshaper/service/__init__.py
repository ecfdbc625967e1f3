"""HTTP control plane for the shaping tunnel."""

from .app import create_app

__all__ = ["create_app"]
