"""Compositor - dynamic service composition over replicated caches and registries."""

__version__ = "0.1.0"

from .config import CompositorConfig, load_config
from .gateway import CompositionSystem, handle_request, parse_request, render_response

__all__ = [
    "CompositionSystem",
    "CompositorConfig",
    "handle_request",
    "load_config",
    "parse_request",
    "render_response",
]
