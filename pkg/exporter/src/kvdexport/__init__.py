"""KV-cache exporter: pull rotary-attention caches out of pretrained
transformers and write them as .kvd interchange files."""

from .export import ExportError, ExportSpec, export_cache

__all__ = ["ExportError", "ExportSpec", "export_cache"]
