from .synthetic import synthetic_corpus

__all__ = ["batches", "corpus", "datamodules", "synthetic"]
