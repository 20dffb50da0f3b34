"""CCFT feature exporter for the coarsecrop toolkit."""

__version__ = "0.1.0"

from .export import ExportConfig, export_corpus, write_ccft

__all__ = ["ExportConfig", "export_corpus", "write_ccft", "__version__"]
