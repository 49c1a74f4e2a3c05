import pytest

# the exporter is optional: the engine's own suite must run without it
pytest.importorskip("torch", reason="exporter not built (torch missing)")
pytest.importorskip("transformers", reason="exporter not built (transformers missing)")
pytest.importorskip("kvdexport", reason="exporter package not installed")
