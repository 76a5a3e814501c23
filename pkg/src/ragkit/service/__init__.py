from .app import create_app
from .sessions import Session, SessionManager

__all__ = ["create_app", "Session", "SessionManager"]
