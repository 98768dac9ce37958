"""Resource-aware hierarchical federated learning for wireless video caching."""

__version__ = "0.1.0"
