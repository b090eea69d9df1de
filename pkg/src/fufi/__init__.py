"""Fine-grained urban flow inference."""
__version__ = "0.1.0"
