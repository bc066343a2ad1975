"""Self-describing on-disk container for trained classifiers.

An ``.npz`` archive holding the flat weight arrays plus a JSON metadata
record (format version, kind, window, threshold, training report).
Load(save(c)) reproduces the classifier exactly, weights bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nets import Classifier

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_classifier(c: Classifier, path: str | Path) -> Path:
    path = Path(path)
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": c.kind,
        "window": c.window,
        "threshold": c.threshold,
        "meta": c.meta,
    }
    arrays = {f"param/{k}": v for k, v in c.params.items()}
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_classifier(path: str | Path) -> Classifier:
    with np.load(path) as archive:
        meta = json.loads(archive[_META_KEY].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported container version {meta.get('format_version')!r}"
            )
        params = {
            name.removeprefix("param/"): archive[name]
            for name in archive.files
            if name.startswith("param/")
        }
    return Classifier(
        kind=meta["kind"],
        window=int(meta["window"]),
        params=params,
        threshold=meta["threshold"],
        meta=meta["meta"],
    )
