"""Pseudo-relevance feedback query expansion combining an attention pointer
network over feedback documents with a pairwise-trained statistical term
ranker."""

from .corpus import Corpus, Document, PreprocessConfig, Query, Vocabulary, build_corpus, tokenize
from .embed import EmbeddingTable, load_embeddings, positional_encoding
from .evaluation import average_precision, cross_validate, ndcg, precision_at, robustness_index, wilcoxon_signed_rank
from .expand import ExpansionConfig, Pipeline, TrainOptions, expand_and_retrieve, generate_labels, update_query
from .index import InvertedIndex, RankedList, WeightedQuery, bm25_score, retrieve, retrieve_weighted
from .kernels import BACKEND_NAME
from .qa_net import PointerConfig, PointerModel, pointer_forward, w_qa
from .stat_rank import RankerModel, feature_vector, w_prf

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "Corpus",
    "Document",
    "EmbeddingTable",
    "ExpansionConfig",
    "InvertedIndex",
    "Pipeline",
    "PointerConfig",
    "PointerModel",
    "PreprocessConfig",
    "Query",
    "RankedList",
    "RankerModel",
    "TrainOptions",
    "Vocabulary",
    "WeightedQuery",
    "average_precision",
    "bm25_score",
    "build_corpus",
    "cross_validate",
    "expand_and_retrieve",
    "feature_vector",
    "generate_labels",
    "load_embeddings",
    "ndcg",
    "positional_encoding",
    "precision_at",
    "pointer_forward",
    "retrieve",
    "retrieve_weighted",
    "robustness_index",
    "tokenize",
    "update_query",
    "w_prf",
    "w_qa",
    "wilcoxon_signed_rank",
]
