"""HTTP service layer: pydantic models, operation handlers, FastAPI app."""

from .app import app, create_app

__all__ = ["app", "create_app"]
