"""echolex: a cross-modal bioacoustic workbench.

Builds caption-paired audio corpora, trains paired audio/text encoders with a
symmetric contrastive objective, and serves free-text search, zero-shot
classification, and retrieval evaluation over an embedding index.
"""

__version__ = "0.1.0"
