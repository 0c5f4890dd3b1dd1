"""Per-question attention-head pruning selection via learned head embeddings."""

__version__ = "0.1.0"
