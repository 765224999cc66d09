"""Attribute-aware multimodal entity linking: corpus model, retrieval, disambiguation, training, evaluation."""

__version__ = "0.1.0"
