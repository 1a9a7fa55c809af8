"""HTTP layer: run with ``uvicorn lidqr.service:app``."""

from .app import app, create_app

__all__ = ["app", "create_app"]
