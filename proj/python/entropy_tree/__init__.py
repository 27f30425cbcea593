"""Entropy-gated tree decoding over pluggable token-level backends."""

from ._core import (
    Model,
    auroc,
    calibrate_thresholds,
    decode_leaves,
    decode_tree_json,
    extract_answer,
    load_model,
    majority_vote,
    pass_at_k,
    percentile,
    predictive_entropy,
    token_entropy,
)

__all__ = [
    "Model",
    "auroc",
    "calibrate_thresholds",
    "decode_leaves",
    "decode_tree_json",
    "extract_answer",
    "load_model",
    "majority_vote",
    "pass_at_k",
    "percentile",
    "predictive_entropy",
    "token_entropy",
]
