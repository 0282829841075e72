"""CLI entry points and the real-time render service."""

from .app import FRAME_FORMAT_PNG, build_app
from .cli import build_parser, main
from .engine import RenderEngine, load_envmap
from .state import SessionState, apply_message

__all__ = [
    "FRAME_FORMAT_PNG",
    "RenderEngine",
    "SessionState",
    "apply_message",
    "build_app",
    "build_parser",
    "load_envmap",
    "main",
]
