"""Cross-modal multi-hop QA dataset generation and evaluation toolkit."""

__version__ = "0.1.0"
