"""Desk-scale byte-embedding convolutional detectors.

Two families, matching the architectures attacked in practice:

* ``toy-malconv`` - gated convolution: two parallel non-overlapping
  500-byte filter banks (one passed through a sigmoid gate), elementwise
  product, global max pool over window positions, one dense output unit.
* ``toy-hier-lin`` / ``toy-hier-relu`` - five interleaved conv+maxpool
  stages, each shrinking the sequence to a quarter, global max pool,
  dense output unit.  The two variants differ only in the stage
  activation.

Both operate on a 257-row embedding table: byte values 0..255 plus a
padding token for positions past the end of short files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import layers

PADDING_TOKEN = 256
VOCABULARY = 257

MALCONV_KIND = "toy-malconv"
HIER_LIN_KIND = "toy-hier-lin"
HIER_RELU_KIND = "toy-hier-relu"
HANDCRAFTED_KIND = "hand-crafted"

CONV_KINDS = (MALCONV_KIND, HIER_LIN_KIND, HIER_RELU_KIND)
ALL_KINDS = CONV_KINDS + (HANDCRAFTED_KIND,)

MALCONV_WINDOW = 16384
MALCONV_DIM = 8
MALCONV_FILTERS = 128
MALCONV_KERNEL = 500

HIER_WINDOW = 4096
HIER_DIM = 10
HIER_FILTERS = 16
HIER_KERNEL = 4
HIER_STAGES = 5


class NotDifferentiable(TypeError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class Classifier:
    """A scoring function over raw bytes, with optional gradient access."""

    kind: str
    window: int
    params: dict[str, np.ndarray]
    threshold: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def differentiable(self) -> bool:
        return self.kind in CONV_KINDS

    @property
    def embedding_dim(self) -> int:
        return int(self.embedding_table().shape[1])

    def embedding_table(self) -> np.ndarray:
        if not self.differentiable:
            raise NotDifferentiable(f"{self.kind} has no byte embedding")
        return self.params["embedding"]

    def score(self, data: bytes) -> float:
        return float(self.score_batch([data])[0])

    def score_batch(self, batch: list[bytes], chunk: int = 32) -> np.ndarray:
        if self.differentiable:
            out = np.empty(len(batch))
            for start in range(0, len(batch), chunk):
                part = batch[start : start + chunk]
                idx = np.stack([bytes_to_indices(d, self.window) for d in part])
                X = self.params["embedding"][idx]
                scores, _ = net_forward(self, X)
                out[start : start + len(part)] = scores
            return out
        from . import features  # deferred: features imports pe machinery

        vectors = np.stack([features.extract_features(d) for d in batch])
        return features.handcrafted_scores(self, vectors)


def bytes_to_indices(data: bytes, window: int) -> np.ndarray:
    """First ``window`` byte values, padding-token filled past the end."""
    idx = np.full(window, PADDING_TOKEN, dtype=np.int32)
    used = min(len(data), window)
    if used:
        idx[:used] = np.frombuffer(data[:used], dtype=np.uint8)
    return idx


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, shape)


_KIND_SALT = {MALCONV_KIND: 1, HIER_LIN_KIND: 2, HIER_RELU_KIND: 3, HANDCRAFTED_KIND: 4}


def init_params(kind: str, seed: int, window: int | None = None) -> Classifier:
    rng = np.random.default_rng([seed, _KIND_SALT.get(kind, 0)])
    if kind == MALCONV_KIND:
        window = window or MALCONV_WINDOW
        kc = MALCONV_KERNEL * MALCONV_DIM
        params = {
            "embedding": rng.normal(0.0, 0.4, (VOCABULARY, MALCONV_DIM)),
            "conv_w": _glorot(rng, kc, MALCONV_FILTERS, (kc, MALCONV_FILTERS)),
            "conv_b": np.zeros(MALCONV_FILTERS),
            "gate_w": _glorot(rng, kc, MALCONV_FILTERS, (kc, MALCONV_FILTERS)),
            "gate_b": np.zeros(MALCONV_FILTERS),
            "dense_w": _glorot(rng, MALCONV_FILTERS, 1, (MALCONV_FILTERS,)),
            "dense_b": np.zeros(1),
        }
        meta = {"gate": "sigmoid", "dense": "single-unit"}
    elif kind in (HIER_LIN_KIND, HIER_RELU_KIND):
        window = window or HIER_WINDOW
        if window % (4**HIER_STAGES) != 0:
            raise ShapeMismatch(
                f"window {window} must be a multiple of {4 ** HIER_STAGES}"
            )
        params = {"embedding": rng.normal(0.0, 0.4, (VOCABULARY, HIER_DIM))}
        ch = HIER_DIM
        for s in range(HIER_STAGES):
            kc = HIER_KERNEL * ch
            params[f"stage{s}_w"] = _glorot(
                rng, kc, HIER_FILTERS, (kc, HIER_FILTERS)
            )
            params[f"stage{s}_b"] = np.zeros(HIER_FILTERS)
            ch = HIER_FILTERS
        params["dense_w"] = _glorot(rng, HIER_FILTERS, 1, (HIER_FILTERS,))
        params["dense_b"] = np.zeros(1)
        meta = {"stages": HIER_STAGES, "dense": "single-unit"}
    else:
        raise ShapeMismatch(f"unknown differentiable kind {kind!r}")
    return Classifier(kind=kind, window=window, params=params, meta=meta)


def _check_embedded(c: Classifier, X: np.ndarray) -> np.ndarray:
    d = c.embedding_dim
    if X.ndim == 2:
        X = X[None, :, :]
    if X.ndim != 3 or X.shape[1] != c.window or X.shape[2] != d:
        raise ShapeMismatch(
            f"expected embedded input of shape ({c.window}, {d}), got {X.shape}"
        )
    return X


def net_forward(c: Classifier, X: np.ndarray):
    """Scores for a batch of embedded inputs, plus the backward cache."""
    X = _check_embedded(c, np.asarray(X, dtype=np.float64))
    p = c.params
    if c.kind == MALCONV_KIND:
        A, cols = layers.strided_conv_forward(X, p["conv_w"], p["conv_b"])
        G_pre, _ = layers.strided_conv_forward(X, p["gate_w"], p["gate_b"])
        G = layers.sigmoid(G_pre)
        H = A * G
        pooled, arg = layers.global_maxpool_forward(H)
        logit = pooled @ p["dense_w"] + p["dense_b"][0]
        score = layers.sigmoid(logit)
        cache = {"X": X, "cols": cols, "A": A, "G": G, "arg": arg, "pooled": pooled,
                 "score": score, "nwin": H.shape[1]}
        return score, cache
    if c.kind in (HIER_LIN_KIND, HIER_RELU_KIND):
        use_relu = c.kind == HIER_RELU_KIND
        stages = []
        cur = X
        for s in range(HIER_STAGES):
            cols = layers.unfold_same(cur, HIER_KERNEL)
            pre = cols @ p[f"stage{s}_w"] + p[f"stage{s}_b"]
            act = layers.relu(pre) if use_relu else pre
            out, arg = layers.maxpool_forward(act, 4)
            stages.append(
                {"cols": cols, "pre": pre, "arg": arg, "length": cur.shape[1],
                 "channels": cur.shape[2]}
            )
            cur = out
        pooled, garg = layers.global_maxpool_forward(cur)
        logit = pooled @ p["dense_w"] + p["dense_b"][0]
        score = layers.sigmoid(logit)
        cache = {"X": X, "stages": stages, "garg": garg, "glen": cur.shape[1],
                 "pooled": pooled, "score": score}
        return score, cache
    raise NotDifferentiable(f"{c.kind} has no embedded forward pass")


def net_backward(c: Classifier, cache: dict, dlogit: np.ndarray, want_params: bool):
    """Backward from a per-sample logit gradient.

    Returns (dX, param_grads); ``param_grads`` is None when not requested.
    The embedding gradient is left to the caller, who owns the byte
    indices needed for the scatter.
    """
    p = c.params
    grads: dict[str, np.ndarray] | None = {} if want_params else None
    if c.kind == MALCONV_KIND:
        pooled, arg = cache["pooled"], cache["arg"]
        if want_params:
            grads["dense_w"] = pooled.T @ dlogit
            grads["dense_b"] = np.array([dlogit.sum()])
        dpooled = dlogit[:, None] * p["dense_w"][None, :]
        dH = layers.global_maxpool_backward(dpooled, arg, cache["nwin"])
        A, G = cache["A"], cache["G"]
        dA = dH * G
        dGpre = dH * A * G * (1.0 - G)
        cols = cache["cols"]
        X = cache["X"]
        B, L, C = X.shape
        dWf, dbf, dX1 = layers.strided_conv_backward(cols, p["conv_w"], dA, L, C)
        dWg, dbg, dX2 = layers.strided_conv_backward(cols, p["gate_w"], dGpre, L, C)
        if want_params:
            grads["conv_w"], grads["conv_b"] = dWf, dbf
            grads["gate_w"], grads["gate_b"] = dWg, dbg
        return dX1 + dX2, grads
    if c.kind in (HIER_LIN_KIND, HIER_RELU_KIND):
        use_relu = c.kind == HIER_RELU_KIND
        if want_params:
            grads["dense_w"] = cache["pooled"].T @ dlogit
            grads["dense_b"] = np.array([dlogit.sum()])
        dcur = layers.global_maxpool_backward(
            dlogit[:, None] * p["dense_w"][None, :], cache["garg"], cache["glen"]
        )
        for s in range(HIER_STAGES - 1, -1, -1):
            st = cache["stages"][s]
            dact = layers.maxpool_backward(dcur, st["arg"], 4)
            dpre = dact * (st["pre"] > 0) if use_relu else dact
            cols = st["cols"]
            KC = cols.shape[-1]
            F = dpre.shape[-1]
            if want_params:
                grads[f"stage{s}_w"] = cols.reshape(-1, KC).T @ dpre.reshape(-1, F)
                grads[f"stage{s}_b"] = dpre.sum(axis=(0, 1))
            dcols = dpre @ p[f"stage{s}_w"].T
            dcur = layers.fold_same(dcols, HIER_KERNEL, st["length"], st["channels"])
        return dcur, grads
    raise NotDifferentiable(f"{c.kind} has no backward pass")


def score_gradient_from_cache(c: Classifier, cache: dict) -> np.ndarray:
    """d(score)/dX for each sample in the cached forward pass."""
    s = cache["score"]
    dlogit = s * (1.0 - s)
    dX, _ = net_backward(c, cache, dlogit, want_params=False)
    return dX
