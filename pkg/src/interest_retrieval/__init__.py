"""User profiles built from interest units, and retrieval driven by them."""

from .embedding import EmbedderConfig, HashedEmbedder, VocabEmbedder, make_embedder, similarity
from .index import DocumentIndex, IVFParams, build_index
from .retrieval import RankedResult, RetrievalConfig, retrieve
from .units import Document, InterestUnit, ProfileStore, UnitConfig, UserProfile, build_profile, update_profile

__version__ = "0.1.0"

__all__ = [
    "Document",
    "DocumentIndex",
    "EmbedderConfig",
    "HashedEmbedder",
    "IVFParams",
    "InterestUnit",
    "ProfileStore",
    "RankedResult",
    "RetrievalConfig",
    "UnitConfig",
    "UserProfile",
    "VocabEmbedder",
    "build_index",
    "build_profile",
    "make_embedder",
    "retrieve",
    "similarity",
    "update_profile",
]
