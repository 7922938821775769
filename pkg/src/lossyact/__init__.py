"""Error-bounded lossy compression of CNN activations with adaptive error-bound control."""

__version__ = "0.1.0"
