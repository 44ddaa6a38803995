"""HTTP sidecar exposing a frozen text encoder (embed + token-count endpoints)."""

from .app import create_app
from .encoders import HashEncoder, SentenceEncoder, make_encoder

__version__ = "0.1.0"

__all__ = ["create_app", "HashEncoder", "SentenceEncoder", "make_encoder"]
