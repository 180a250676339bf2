"""Masked-LM inference server speaking the black-box oracle wire protocol."""

from .app import build_app
from .config import BridgeConfig
from .model import MaskedLMScorer

__version__ = "0.1.0"
