"""Gradient-driven byte attacks through the embedding layer.

The embedding lookup is not differentiable, so the optimizer descends in
embedding space and maps each perturbed row back to a concrete byte.  The
main loop ranks editable positions by masked gradient norm, rewrites up
to a fixed budget of them per round via closest-positive reconstruction,
and keeps a step only when the score did not get worse.  A signed-step
variant perturbs the whole masked region in feature space and
reconstructs once at the end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import manipulations as manips
from . import models
from .manipulations import ManipulationKind, ManipulationVector, Prepared


class ZeroGradient(ValueError):
    pass


@dataclass(frozen=True)
class WhiteboxConfig:
    """Knobs for the gradient attacks.

    ``bytes_per_round`` caps how many positions one iteration may rewrite;
    ``distortion`` is the signed-update magnitude and ``step_size`` the
    plain-gradient magnitude of the feature-space variant.
    """

    bytes_per_round: int = 256
    iterations: int = 50
    step_size: float = 0.5
    distortion: float = 0.1
    seed: int = 0

    def check(self) -> None:
        if self.bytes_per_round < 1:
            raise ValueError("bytes_per_round must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.step_size <= 0 or self.distortion <= 0:
            raise ValueError("step sizes must be positive")


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    score: float
    bytes_changed: int


@dataclass
class AttackTrace:
    """Per-iteration record of an attack run."""

    steps: list[TraceStep] = field(default_factory=list)
    initial_score: float = float("nan")
    final_score: float = float("nan")
    evaded: bool | None = None
    timed_out: bool = False
    queries_used: int | None = None
    payload: ManipulationVector | None = None
    extras: dict = field(default_factory=dict)

    def record(self, iteration: int, score: float, bytes_changed: int = 0) -> None:
        self.steps.append(TraceStep(iteration, float(score), bytes_changed))

    def finish(self, final_score: float, threshold: float | None) -> None:
        self.final_score = float(final_score)
        self.evaded = None if threshold is None else bool(final_score < threshold)

    def scores(self) -> list[float]:
        return [s.score for s in self.steps]

    def to_lines(self) -> list[str]:
        return [f"{s.iteration},{s.score:.10f}" for s in self.steps]


def reconstruct_byte(
    x_row: np.ndarray, g_row: np.ndarray, table: np.ndarray
) -> int | None:
    """Closest byte embedding on the positive side of the gradient direction.

    Projects every candidate embedding onto the unit gradient direction,
    keeps those strictly ahead of the current point, and returns the byte
    whose embedding lies nearest to its own projection onto that line.
    None when nothing lies ahead.
    """
    g = np.asarray(g_row, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise ZeroGradient("gradient row is zero; nothing points anywhere")
    direction = g / norm
    candidates = np.asarray(table, dtype=np.float64)[: min(len(table), 256)]
    diffs = candidates - np.asarray(x_row, dtype=np.float64)
    along = diffs @ direction
    ahead = along > 0
    if not np.any(ahead):
        return None
    perp = diffs - along[:, None] * direction[None, :]
    dist = np.linalg.norm(perp, axis=1)
    dist[~ahead] = np.inf
    return int(np.argmin(dist))


def _score_prepared(c: models.Classifier, prepared: Prepared, payload: np.ndarray):
    data = prepared.apply(payload.tobytes())
    idx = models.bytes_to_indices(data, c.window)
    X = c.params["embedding"][idx][None, :, :]
    scores, cache = models.net_forward(c, X)
    return float(scores[0]), cache, data


def attack(
    z: bytes,
    c: models.Classifier,
    kind: ManipulationKind | str,
    cfg: WhiteboxConfig,
    *,
    request_size: int = 512,
    padding_size: int = 10240,
    time_budget: float | None = None,
) -> tuple[bytes, AttackTrace]:
    """Iterative closest-positive byte attack over one manipulation's mask."""
    cfg.check()
    if cfg.iterations < 1:
        raise ValueError("the byte attack needs at least one iteration")
    if not c.differentiable:
        raise models.NotDifferentiable(f"{c.kind} exposes no gradients")
    prepared = manips.build_prepared(
        kind, z, request_size=request_size, padding_size=padding_size
    )
    table = c.embedding_table()
    rng = np.random.default_rng([cfg.seed, 23])
    started = time.monotonic()

    positions = prepared.mask.positions
    in_window = positions < c.window  # bytes past the window cannot move the score
    slots = np.flatnonzero(in_window)

    payload = rng.integers(0, 256, prepared.payload_size, dtype=np.uint8)
    trace = AttackTrace()
    trace.initial_score = c.score(z)

    score_cur, cache_cur, _ = _score_prepared(c, prepared, payload)
    best_payload = payload.copy()
    best_score = score_cur

    for it in range(1, cfg.iterations + 1):
        if time_budget is not None and time.monotonic() - started > time_budget:
            trace.timed_out = True
            break
        changed = 0
        if len(slots) > 0:
            dX = models.score_gradient_from_cache(c, cache_cur)[0]
            G = -dX[positions[slots]]
            norms = np.linalg.norm(G, axis=1)
            order = np.argsort(-norms, kind="stable")
            proposal = payload.copy()
            for rank in order[: cfg.bytes_per_round]:
                if norms[rank] == 0.0:
                    break  # stable descending order: all zeros from here on
                row = positions[slots[rank]]
                new_byte = reconstruct_byte(cache_cur["X"][0, row], G[rank], table)
                if new_byte is not None and new_byte != proposal[slots[rank]]:
                    proposal[slots[rank]] = new_byte
                    changed += 1
            if changed:
                score_new, cache_new, _ = _score_prepared(c, prepared, proposal)
                if score_new <= score_cur:
                    payload, score_cur, cache_cur = proposal, score_new, cache_new
                else:
                    touched = np.flatnonzero(proposal != payload)
                    payload = payload.copy()
                    payload[touched] = rng.integers(0, 256, len(touched), dtype=np.uint8)
                    score_cur, cache_cur, _ = _score_prepared(c, prepared, payload)
                if score_cur < best_score:
                    best_score, best_payload = score_cur, payload.copy()
        trace.record(it, best_score, changed)

    adv = prepared.apply(best_payload.tobytes())
    trace.payload = ManipulationVector(
        payload=best_payload.tobytes(), requested_size=prepared.requested_size
    )
    trace.finish(best_score, c.threshold)
    return adv, trace


def fgsm_attack(
    z: bytes,
    c: models.Classifier,
    cfg: WhiteboxConfig,
    *,
    masks: Iterable[str] = ("padding", "slack"),
    padding_size: int = 10240,
    stop_on_evasion: bool = True,
    use_sign: bool = True,
    time_budget: float | None = None,
) -> tuple[bytes, AttackTrace]:
    """Signed feature-space descent with one nearest-byte reconstruction.

    With ``cfg.iterations == 1`` this is the single-shot variant; larger
    budgets repeat the update until the feature-space score clears the
    threshold (when calibrated and ``stop_on_evasion``).
    """
    cfg.check()
    if not c.differentiable:
        raise models.NotDifferentiable(f"{c.kind} exposes no gradients")
    trace = AttackTrace()
    trace.initial_score = c.score(z)
    if cfg.iterations == 0:
        trace.finish(trace.initial_score, c.threshold)
        return bytes(z), trace

    mask_names = set(masks)
    base = bytes(z)
    ranges: list[np.ndarray] = []
    prepared: Prepared | None = None
    if "padding" in mask_names:
        prepared = manips.prepare_padding(z, padding_size)
        base = prepared.base
        ranges.append(prepared.mask.positions)
    if "slack" in mask_names:
        ranges.append(manips.slack_mask(base).positions)
    positions = (
        np.unique(np.concatenate(ranges)) if ranges else np.zeros(0, dtype=np.int64)
    )
    positions = positions[positions < c.window]

    table = c.embedding_table()
    idx = models.bytes_to_indices(base, c.window)
    X = table[idx][None, :, :].astype(np.float64)
    started = time.monotonic()

    for it in range(1, cfg.iterations + 1):
        if time_budget is not None and time.monotonic() - started > time_budget:
            trace.timed_out = True
            break
        scores, cache = models.net_forward(c, X)
        feature_score = float(scores[0])
        trace.record(it, feature_score)
        if (
            stop_on_evasion
            and c.threshold is not None
            and feature_score < c.threshold
        ):
            break
        if len(positions) == 0:
            continue
        dX = models.score_gradient_from_cache(c, cache)[0]
        step = (
            cfg.distortion * np.sign(dX[positions])
            if use_sign
            else cfg.step_size * dX[positions]
        )
        X[0, positions] -= step

    payload = np.frombuffer(base, dtype=np.uint8).copy()
    for pos in positions:
        diffs = table[:256] - X[0, pos]
        payload[pos] = int(np.argmin(np.linalg.norm(diffs, axis=1)))
    adv = payload.tobytes()
    final = c.score(adv)
    trace.payload = ManipulationVector(
        payload=payload[positions].tobytes(), requested_size=padding_size
    )
    trace.finish(final, c.threshold)
    return adv, trace
