"""BM25 retrieval and neural re-ranking for financial answer selection."""

from ._finrank import (
    Bm25Params,
    DataError,
    InvalidArgument,
    NumericalError,
    Reranker,
    Searcher,
    bm25_term_weight,
    clean_text,
    evaluate,
    generate_synthetic,
    ndcg,
    precision_at_k,
    reciprocal_rank,
    run_cli,
    tokenize,
)

__all__ = [
    "Bm25Params",
    "DataError",
    "InvalidArgument",
    "NumericalError",
    "Reranker",
    "Searcher",
    "bm25_term_weight",
    "clean_text",
    "evaluate",
    "generate_synthetic",
    "ndcg",
    "precision_at_k",
    "reciprocal_rank",
    "run_cli",
    "tokenize",
]

__version__ = "0.1.0"
