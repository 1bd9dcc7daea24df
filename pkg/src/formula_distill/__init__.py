"""Search-history distillation for symbolic regression."""

__version__ = "0.1.0"
