"""Seeded training and threshold calibration for the desk-scale models.

Training is plain mini-batch Adam on binary cross-entropy.  Nothing here
is tuned for leaderboard accuracy; the contract is determinism (same
seed, same weights) plus enough separation on the synthetic corpus for
attack experiments to mean something.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import features as features_mod
from . import nets
from .nets import Classifier

DEFAULT_EPOCHS = 30
DEFAULT_BATCH = 32
TARGET_VAL_ACCURACY = 0.97


class DegenerateCorpus(ValueError):
    pass


class NoNegatives(ValueError):
    pass


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _split(n: int, seed: int, val_fraction: float = 0.25):
    rng = np.random.default_rng([seed, 91])
    order = rng.permutation(n)
    n_val = max(1, int(n * val_fraction))
    return order[n_val:], order[:n_val]


def _accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(((scores >= 0.5).astype(int) == labels).mean())


def _train_convnet(
    data: list[bytes],
    labels: np.ndarray,
    kind: str,
    seed: int,
    window: int | None,
    epochs: int,
    batch_size: int,
    lr: float,
    target_accuracy: float,
) -> Classifier:
    c = nets.init_params(kind, seed, window)
    idx_all = np.stack([nets.bytes_to_indices(d, c.window) for d in data])
    train_ids, val_ids = _split(len(data), seed)
    y = labels.astype(np.float64)

    opt = _Adam(c.params, lr)
    rng = np.random.default_rng([seed, 17])
    history = []
    for epoch in range(epochs):
        order = rng.permutation(train_ids)
        for start in range(0, len(order), batch_size):
            ids = order[start : start + batch_size]
            idx = idx_all[ids]
            X = c.params["embedding"][idx]
            scores, cache = nets.net_forward(c, X)
            dlogit = (scores - y[ids]) / len(ids)
            dX, grads = nets.net_backward(c, cache, dlogit, want_params=True)
            dE = np.zeros_like(c.params["embedding"])
            np.add.at(dE, idx.reshape(-1), dX.reshape(-1, dX.shape[-1]))
            grads["embedding"] = dE
            opt.step(c.params, grads)
        val_scores = _scores_by_index(c, idx_all, val_ids, batch_size)
        val_acc = _accuracy(val_scores, labels[val_ids])
        history.append(val_acc)
        if val_acc >= target_accuracy:
            break
    train_scores = _scores_by_index(c, idx_all, train_ids, batch_size)
    c.meta.update(
        {
            "train_accuracy": _accuracy(train_scores, labels[train_ids]),
            "val_accuracy": history[-1],
            "epochs_run": len(history),
            "seed": seed,
        }
    )
    return c


def _scores_by_index(
    c: Classifier, idx_all: np.ndarray, ids: np.ndarray, batch_size: int
) -> np.ndarray:
    out = np.empty(len(ids))
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        X = c.params["embedding"][idx_all[chunk]]
        scores, _ = nets.net_forward(c, X)
        out[start : start + len(chunk)] = scores
    return out


def _train_handcrafted(
    data: list[bytes],
    labels: np.ndarray,
    seed: int,
    epochs: int,
    lr: float,
) -> Classifier:
    c = features_mod.init_handcrafted(seed)
    vectors = np.stack([features_mod.extract_features(d) for d in data])
    train_ids, val_ids = _split(len(data), seed)
    mean = vectors[train_ids].mean(axis=0)
    scale = vectors[train_ids].std(axis=0)
    scale[scale < 1e-9] = 1.0
    c.params["mean"], c.params["scale"] = mean, scale

    z = features_mod.standardize(c, vectors)
    y = labels.astype(np.float64)
    opt = _Adam({"weights": c.params["weights"], "bias": c.params["bias"]}, lr)
    for _ in range(epochs):
        logits = z[train_ids] @ c.params["weights"] + c.params["bias"][0]
        scores = 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))
        err = (scores - y[train_ids]) / len(train_ids)
        grads = {
            "weights": z[train_ids].T @ err,
            "bias": np.array([err.sum()]),
        }
        opt.step({"weights": c.params["weights"], "bias": c.params["bias"]}, grads)
    c.meta.update(
        {
            "train_accuracy": _accuracy(
                features_mod.handcrafted_scores(c, vectors[train_ids]), labels[train_ids]
            ),
            "val_accuracy": _accuracy(
                features_mod.handcrafted_scores(c, vectors[val_ids]), labels[val_ids]
            ),
            "epochs_run": epochs,
            "seed": seed,
        }
    )
    return c


def train(
    corpus: Sequence,
    kind: str,
    *,
    seed: int = 0,
    window: int | None = None,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH,
    lr: float = 2e-3,
    target_accuracy: float = TARGET_VAL_ACCURACY,
) -> Classifier:
    """Fit one detector on a labeled corpus of (bytes, label) pairs.

    ``corpus`` may be any sequence of objects with ``data`` and ``label``
    attributes, or of (bytes, label) tuples.
    """
    data, labels = _unpack_corpus(corpus)
    if len(set(labels.tolist())) < 2:
        raise DegenerateCorpus("training needs both classes")
    if kind == nets.HANDCRAFTED_KIND:
        return _train_handcrafted(data, labels, seed, epochs=max(epochs, 200), lr=0.05)
    if kind in nets.CONV_KINDS:
        return _train_convnet(
            data, labels, kind, seed, window, epochs, batch_size, lr, target_accuracy
        )
    raise ValueError(f"unknown classifier kind {kind!r}")


def _unpack_corpus(corpus: Sequence):
    data: list[bytes] = []
    labels: list[int] = []
    for item in corpus:
        if hasattr(item, "data"):
            data.append(item.data)
            labels.append(int(item.label))
        else:
            d, y = item
            data.append(d)
            labels.append(int(y))
    return data, np.asarray(labels, dtype=np.int64)


def calibrate_threshold(
    scores: Sequence[float], labels: Sequence[int], target_fpr: float
) -> float:
    """Smallest observed score whose false-positive rate is within target.

    Negatives are label 0.  If even the top score lets too many negatives
    through, the threshold lands just above the maximum score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    neg = scores[labels == 0]
    if len(neg) == 0:
        raise NoNegatives("calibration needs negative-class scores")
    for theta in np.unique(scores):
        if (neg >= theta).mean() <= target_fpr:
            return float(theta)
    return float(np.nextafter(scores.max(), np.inf))


def detection_rate(scores: Sequence[float], threshold: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        return 0.0
    return float((scores >= threshold).mean())
