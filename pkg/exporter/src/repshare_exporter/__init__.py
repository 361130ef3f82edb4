"""Bridge from PyTorch models to repshare's dump and manifest formats."""

from .export import ExportError, export, load_model

__version__ = "0.1.0"
