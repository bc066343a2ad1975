"""Desk-scale malware classifiers: byte-embedding nets and a feature baseline."""

from __future__ import annotations

import numpy as np

from .features import FEATURE_DIM, extract_features, init_handcrafted
from .nets import (
    ALL_KINDS,
    CONV_KINDS,
    HANDCRAFTED_KIND,
    HIER_LIN_KIND,
    HIER_RELU_KIND,
    HIER_WINDOW,
    MALCONV_KIND,
    MALCONV_WINDOW,
    PADDING_TOKEN,
    VOCABULARY,
    Classifier,
    NotDifferentiable,
    ShapeMismatch,
    bytes_to_indices,
    init_params,
    net_forward,
    score_gradient_from_cache,
)
from .store import load_classifier, save_classifier
from .train import (
    DegenerateCorpus,
    NoNegatives,
    calibrate_threshold,
    detection_rate,
    train,
)

__all__ = [
    "ALL_KINDS",
    "CONV_KINDS",
    "Classifier",
    "DegenerateCorpus",
    "FEATURE_DIM",
    "HANDCRAFTED_KIND",
    "HIER_LIN_KIND",
    "HIER_RELU_KIND",
    "HIER_WINDOW",
    "MALCONV_KIND",
    "MALCONV_WINDOW",
    "NoNegatives",
    "NotDifferentiable",
    "PADDING_TOKEN",
    "ShapeMismatch",
    "VOCABULARY",
    "bytes_to_indices",
    "calibrate_threshold",
    "detection_rate",
    "embed",
    "extract_features",
    "forward",
    "gradient",
    "init_handcrafted",
    "init_params",
    "load_classifier",
    "save_classifier",
    "train",
]


def embed(data: bytes, c: Classifier) -> np.ndarray:
    """Map bytes to embedding rows: truncated to the window, padded past EOF."""
    table = c.embedding_table()
    return table[bytes_to_indices(data, c.window)]


def forward(X: np.ndarray, c: Classifier) -> float:
    """Score one embedded input."""
    scores, _ = net_forward(c, X)
    return float(scores[0])


def gradient(X: np.ndarray, c: Classifier) -> np.ndarray:
    """d(score)/dX for one embedded input, same shape as X.

    The in-scope attacks all minimize the raw malware score, so the score
    gradient is the loss gradient up to sign.
    """
    _, cache = net_forward(c, X)
    return score_gradient_from_cache(c, cache)[0]
