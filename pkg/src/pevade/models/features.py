"""Static features for the non-differentiable baseline detector.

64 dimensions: a 32-bucket histogram of per-window byte entropy, 16
header scalars, and 16 section-level statistics.  The baseline model is a
logistic scorer over these features; it exists to play the black-box
target that byte-gradient attacks cannot touch directly.
"""

from __future__ import annotations

import numpy as np

from .. import pe
from . import layers
from .nets import Classifier, HANDCRAFTED_KIND

FEATURE_DIM = 64
ENTROPY_BUCKETS = 32
_ENTROPY_WINDOW = 256


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _window_entropies(data: bytes) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    n = len(arr) // _ENTROPY_WINDOW
    if n == 0:
        return np.array([_entropy(np.bincount(arr, minlength=256))]) if len(arr) else np.zeros(1)
    out = np.empty(n)
    for i in range(n):
        win = arr[i * _ENTROPY_WINDOW : (i + 1) * _ENTROPY_WINDOW]
        out[i] = _entropy(np.bincount(win, minlength=256))
    return out


def _printable_fraction(data: bytes) -> float:
    if not data:
        return 0.0
    arr = np.frombuffer(data, dtype=np.uint8)
    return float(((arr >= 0x20) & (arr < 0x7F)).mean())


def extract_features(data: bytes) -> np.ndarray:
    """Deterministic 64-dimensional static feature vector."""
    view = pe.parse(data)
    vec = np.zeros(FEATURE_DIM)

    ents = _window_entropies(data)
    buckets = np.minimum((ents * (ENTROPY_BUCKETS / 8.0)).astype(int), ENTROPY_BUCKETS - 1)
    hist = np.bincount(buckets, minlength=ENTROPY_BUCKETS).astype(float)
    vec[0:32] = hist / max(len(ents), 1)

    header = vec[32:48]
    header[0] = view.pe_offset / 512.0
    header[1] = view.num_sections / 8.0
    header[2] = (np.log2(view.file_alignment) if view.file_alignment > 0 else 0.0) / 16.0
    header[3] = view.size_of_headers / 8192.0
    header[4] = view.entry_point / 65536.0
    header[5] = view.size_of_image / float(2**21)
    header[6] = 1.0 if view.coff_machine == 0x8664 else 0.0
    header[7] = bin(view.coff_characteristics).count("1") / 16.0
    header[8] = len(view.optional_header) / 256.0
    header[9] = (view.coff_timestamp % 1021) / 1021.0
    header[10] = len(data) / 65536.0
    header[11] = len(view.overlay) / 4096.0
    header[12] = len(view.header_padding) / 4096.0
    header[13] = np.count_nonzero(np.frombuffer(view.dos_header, dtype=np.uint8)) / 64.0
    header[14] = _printable_fraction(view.dos_stub)
    header[15] = 1.0 if len(view.optional_header) >= 2 and view.optional_header[:2] == b"\x0b\x02" else 0.0

    sec = vec[48:64]
    if view.num_sections:
        entropies = np.array(
            [
                _entropy(np.bincount(np.frombuffer(d, dtype=np.uint8), minlength=256))
                if d
                else 0.0
                for d in view.section_data
            ]
        )
        raw_sizes = np.array([s.raw_size for s in view.sections], dtype=float)
        virt = np.array([s.virtual_size for s in view.sections], dtype=float)
        chars = np.array([s.characteristics for s in view.sections], dtype=np.uint64)
        slack = np.maximum(raw_sizes - np.array([s.content_size for s in view.sections]), 0)
        printable = np.array([_printable_fraction(d) for d in view.section_data])
        sec[0] = view.num_sections / 8.0
        sec[1] = entropies.mean() / 8.0
        sec[2] = entropies.max() / 8.0
        sec[3] = entropies.min() / 8.0
        sec[4] = entropies.std() / 4.0
        sec[5] = np.log2(raw_sizes + 1).mean() / 24.0
        sec[6] = raw_sizes.sum() / max(len(data), 1)
        sec[7] = float((chars & 0x20000000 != 0).mean())
        sec[8] = float((chars & 0x80000000 != 0).mean())
        sec[9] = float(np.clip(virt / np.maximum(raw_sizes, 1), 0, 4).mean()) / 4.0
        sec[10] = slack.sum() / max(raw_sizes.sum(), 1)
        sec[11] = float((entropies > 6.0).mean())
        sec[12] = float((entropies < 3.0).mean())
        sec[13] = printable.mean()
        sec[14] = float(
            np.mean([_printable_fraction(s.name.rstrip(b"\x00")) for s in view.sections])
        )
        sec[15] = min(s.physical_offset for s in view.sections) / 8192.0
    return vec


def init_handcrafted(seed: int) -> Classifier:
    rng = np.random.default_rng([seed, 4])
    params = {
        "weights": rng.normal(0.0, 0.01, FEATURE_DIM),
        "bias": np.zeros(1),
        "mean": np.zeros(FEATURE_DIM),
        "scale": np.ones(FEATURE_DIM),
    }
    return Classifier(
        kind=HANDCRAFTED_KIND,
        window=0,
        params=params,
        meta={"features": FEATURE_DIM},
    )


def standardize(c: Classifier, vectors: np.ndarray) -> np.ndarray:
    return (vectors - c.params["mean"]) / c.params["scale"]


def handcrafted_logits(c: Classifier, vectors: np.ndarray) -> np.ndarray:
    z = standardize(c, vectors)
    return z @ c.params["weights"] + c.params["bias"][0]


def handcrafted_scores(c: Classifier, vectors: np.ndarray) -> np.ndarray:
    return layers.sigmoid(handcrafted_logits(c, vectors))
