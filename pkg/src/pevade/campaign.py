"""Attack-campaign orchestration: train, calibrate, attack, aggregate.

A campaign is a matrix of (attack, model, sample) cells.  Cells are
independent and carry their own derived seeds, so a worker pool may run
them in any order and the merged result is still byte-reproducible.
Every adversarial output is certified by the structural-equivalence
oracle before it counts.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import blackbox, corpus, equivalence, models, whitebox

WHITEBOX_BYTE_STRATEGIES = ("full-dos", "extend", "shift", "partial-dos", "padding")
ALL_STRATEGIES = WHITEBOX_BYTE_STRATEGIES + ("fgsm", "genetic", "gamma")

# Per-paper space requests: extend grows the header region by 512 bytes
# pre-alignment, shift opens 1024 before the first section.
DEFAULT_REQUEST = {"extend": 512, "shift": 1024, "full-dos": 0, "partial-dos": 0, "padding": 0}


class CampaignError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    strategy: str
    manipulation: str | None = None

    @property
    def label(self) -> str:
        if self.strategy == "genetic":
            return f"genetic-{self.manipulation}"
        return self.strategy

    def resolved_manipulation(self) -> str:
        if self.strategy in WHITEBOX_BYTE_STRATEGIES:
            return self.strategy
        if self.strategy == "genetic":
            return self.manipulation or "full-dos"
        return self.strategy

    def check(self) -> None:
        if self.strategy not in ALL_STRATEGIES:
            raise CampaignError(f"attacks: unknown strategy {self.strategy!r}")
        if self.strategy == "genetic":
            kind = self.manipulation or "full-dos"
            if kind not in WHITEBOX_BYTE_STRATEGIES:
                raise CampaignError(
                    f"attacks: genetic cannot drive manipulation {kind!r}"
                )


@dataclass(frozen=True)
class CampaignConfig:
    corpus: corpus.CorpusSpec = field(default_factory=corpus.CorpusSpec)
    model_kinds: tuple[str, ...] = (models.MALCONV_KIND, models.HIER_RELU_KIND)
    attacks: tuple[AttackSpec, ...] = (AttackSpec("extend"), AttackSpec("shift"))
    fpr: float = 0.001
    seed: int = 0
    attack_samples: int = 16
    iterations: int = 50
    bytes_per_round: int = 256
    request_size: int | None = None
    padding_size: int = 10240
    population: int = 10
    queries: int = 3000
    penalty_weight: float = 1e-5
    time_budget: float | None = None
    workers: int = 0

    def check(self) -> None:
        for kind in self.model_kinds:
            if kind not in models.ALL_KINDS:
                raise CampaignError(f"model_kinds: unknown kind {kind!r}")
        for spec in self.attacks:
            spec.check()
        if not 0.0 < self.fpr <= 1.0:
            raise CampaignError("fpr: must lie in (0, 1]")
        if self.attack_samples < 1:
            raise CampaignError("attack_samples: must be at least 1")
        if self.iterations < 1:
            raise CampaignError("iterations: must be at least 1")


@dataclass
class CellResult:
    attack: str
    model: str
    sample: str
    initial_score: float
    final_score: float
    evaded: bool
    payload_bytes: int
    payload_fraction: float
    wall_time: float
    timed_out: bool
    scores_by_step: list[float]
    adversarial: bytes | None = None


@dataclass
class CampaignResult:
    config: dict
    thresholds: dict[str, float]
    model_reports: dict[str, dict]
    baseline_rates: dict[str, float]
    baseline_scores: dict[str, list[float]]
    cells: list[CellResult]
    curves: dict[str, list[float]]
    mean_scores: dict[str, list[float]]
    transfer: dict[str, dict]
    attack_sample_names: list[str]

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "thresholds": self.thresholds,
            "model_reports": self.model_reports,
            "baseline_rates": self.baseline_rates,
            "baseline_scores": self.baseline_scores,
            "cells": [
                {k: v for k, v in asdict(c).items() if k != "adversarial"}
                for c in self.cells
            ],
            "curves": self.curves,
            "mean_scores": self.mean_scores,
            "transfer": self.transfer,
            "attack_sample_names": self.attack_sample_names,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CampaignResult":
        raw = json.loads(text)
        cells = [CellResult(**c, adversarial=None) for c in raw["cells"]]
        return cls(
            config=raw["config"],
            thresholds=raw["thresholds"],
            model_reports=raw["model_reports"],
            baseline_rates=raw["baseline_rates"],
            baseline_scores=raw["baseline_scores"],
            cells=cells,
            curves=raw["curves"],
            mean_scores=raw["mean_scores"],
            transfer=raw["transfer"],
            attack_sample_names=raw["attack_sample_names"],
        )


def curve_key(attack_label: str, model_kind: str) -> str:
    return f"{attack_label}|{model_kind}"


def _cell_seed(base: int, attack_idx: int, model_idx: int, sample_idx: int) -> int:
    return base * 1_000_003 + attack_idx * 10_007 + model_idx * 101 + sample_idx


def train_models(
    cfg: CampaignConfig, samples: list[corpus.Sample]
) -> dict[str, models.Classifier]:
    trained = {}
    for kind in cfg.model_kinds:
        trained[kind] = models.train(samples, kind, seed=cfg.seed)
    return trained


def calibrate_models(
    trained: dict[str, models.Classifier],
    samples: list[corpus.Sample],
    fpr: float,
) -> None:
    labels = [s.label for s in samples]
    for c in trained.values():
        scores = c.score_batch([s.data for s in samples])
        c.threshold = models.calibrate_threshold(scores, labels, fpr)


def _run_cell(
    spec: AttackSpec,
    model: models.Classifier,
    sample: corpus.Sample,
    cfg: CampaignConfig,
    seed: int,
    benign_pool: tuple[bytes, ...],
) -> CellResult:
    request = cfg.request_size or DEFAULT_REQUEST.get(spec.resolved_manipulation(), 512)
    started = time.monotonic()
    if spec.strategy in WHITEBOX_BYTE_STRATEGIES:
        wb = whitebox.WhiteboxConfig(
            bytes_per_round=cfg.bytes_per_round,
            iterations=cfg.iterations,
            seed=seed,
        )
        adv, trace = whitebox.attack(
            sample.data,
            model,
            spec.strategy,
            wb,
            request_size=request,
            padding_size=cfg.padding_size,
            time_budget=cfg.time_budget,
        )
    elif spec.strategy == "fgsm":
        wb = whitebox.WhiteboxConfig(iterations=cfg.iterations, seed=seed)
        adv, trace = whitebox.fgsm_attack(
            sample.data,
            model,
            wb,
            padding_size=cfg.padding_size,
            time_budget=cfg.time_budget,
        )
    elif spec.strategy == "genetic":
        gc = blackbox.GeneticConfig(
            population_size=cfg.population, query_budget=cfg.queries, seed=seed
        )
        adv, trace = blackbox.genetic_attack(
            sample.data,
            blackbox.QueryScorer.from_classifier(model),
            spec.resolved_manipulation(),
            gc,
            request_size=request,
            padding_size=cfg.padding_size,
            time_budget=cfg.time_budget,
        )
    elif spec.strategy == "gamma":
        gc = blackbox.GeneticConfig(
            population_size=cfg.population, query_budget=cfg.queries, seed=seed
        )
        adv, trace = blackbox.gamma_padding_attack(
            sample.data,
            blackbox.QueryScorer.from_classifier(model),
            blackbox.GammaConfig(
                penalty_weight=cfg.penalty_weight, benign_sections=benign_pool
            ),
            gc,
            time_budget=cfg.time_budget,
        )
    else:
        raise CampaignError(f"attacks: unknown strategy {spec.strategy!r}")

    report = equivalence.structural_equivalence(sample.data, adv)
    if not report.equivalent:
        failed = ", ".join(c.check_id for c in report.failed())
        raise CampaignError(
            f"{spec.label} on {sample.name} broke structural equivalence: {failed}"
        )

    initial = model.score(sample.data)
    final = model.score(adv)
    if spec.strategy == "padding" and len(sample.data) >= model.window:
        if final != initial:
            raise CampaignError(
                f"padding moved the score of over-window sample {sample.name}; "
                "truncation should have made that impossible"
            )
    payload_bytes = len(trace.payload.payload) if trace.payload else 0
    return CellResult(
        attack=spec.label,
        model=model.kind,
        sample=sample.name,
        initial_score=initial,
        final_score=final,
        evaded=bool(model.threshold is not None and final < model.threshold),
        payload_bytes=payload_bytes,
        payload_fraction=payload_bytes / model.window if model.window else 0.0,
        wall_time=time.monotonic() - started,
        timed_out=trace.timed_out,
        scores_by_step=_best_so_far_scores(trace, initial),
        adversarial=adv,
    )


def _best_so_far_scores(trace: whitebox.AttackTrace, initial: float) -> list[float]:
    raw = trace.extras.get("score_steps") or [s.score for s in trace.steps]
    best = initial
    out = []
    for score in raw:
        best = min(best, score)
        out.append(best)
    return out


def select_attack_set(
    samples: list[corpus.Sample], count: int, seed: int
) -> list[corpus.Sample]:
    malware = [s for s in samples if s.label == corpus.MALWARE]
    rng = np.random.default_rng([seed, 77])
    picks = rng.choice(len(malware), size=min(count, len(malware)), replace=False)
    return [malware[i] for i in sorted(picks.tolist())]


def run_campaign(cfg: CampaignConfig) -> CampaignResult:
    cfg.check()
    samples = corpus.generate_corpus(cfg.corpus)
    trained = train_models(cfg, samples)
    calibrate_models(trained, samples, cfg.fpr)

    attack_set = select_attack_set(samples, cfg.attack_samples, cfg.seed)
    needs_gamma = any(spec.strategy == "gamma" for spec in cfg.attacks)
    benign_pool = (
        tuple(blackbox.harvest_sections(samples, limit=100)) if needs_gamma else ()
    )

    baseline_scores = {}
    baseline_rates = {}
    for kind, c in trained.items():
        scores = c.score_batch([s.data for s in attack_set])
        baseline_scores[kind] = [float(s) for s in scores]
        baseline_rates[kind] = models.detection_rate(scores, c.threshold)

    jobs = []
    for ai, spec in enumerate(cfg.attacks):
        for mi, kind in enumerate(cfg.model_kinds):
            if spec.strategy in WHITEBOX_BYTE_STRATEGIES or spec.strategy == "fgsm":
                if not trained[kind].differentiable:
                    continue  # gradient attacks cannot target the baseline model
            for si, sample in enumerate(attack_set):
                jobs.append(
                    (
                        spec,
                        trained[kind],
                        sample,
                        _cell_seed(cfg.seed, ai, mi, si),
                    )
                )

    def run_job(job):
        spec, model, sample, seed = job
        return _run_cell(spec, model, sample, cfg, seed, benign_pool)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            cells = list(pool.map(run_job, jobs))
    else:
        cells = [run_job(j) for j in jobs]

    curves: dict[str, list[float]] = {}
    mean_scores: dict[str, list[float]] = {}
    for spec in cfg.attacks:
        for kind in cfg.model_kinds:
            group = [c for c in cells if c.attack == spec.label and c.model == kind]
            if not group:
                continue
            theta = trained[kind].threshold
            depth = max(len(c.scores_by_step) for c in group)
            dr_curve = [baseline_rates[kind]]
            score_curve = [float(np.mean([c.initial_score for c in group]))]
            for step in range(depth):
                step_scores = [
                    c.scores_by_step[min(step, len(c.scores_by_step) - 1)]
                    if c.scores_by_step
                    else c.initial_score
                    for c in group
                ]
                dr_curve.append(models.detection_rate(step_scores, theta))
                score_curve.append(float(np.mean(step_scores)))
            key = curve_key(spec.label, kind)
            curves[key] = dr_curve
            mean_scores[key] = score_curve

    transfer: dict[str, dict] = {}
    target_items = [(kind, trained[kind]) for kind in cfg.model_kinds]
    for spec in cfg.attacks:
        crafted = []
        for kind in cfg.model_kinds:
            group = [c for c in cells if c.attack == spec.label and c.model == kind]
            if group:
                crafted.append((kind, [c.adversarial for c in group]))
        if not crafted:
            continue
        matrix, rows, cols = blackbox.transfer_evaluate(crafted, target_items)
        transfer[spec.label] = {
            "matrix": matrix.tolist(),
            "surrogates": rows,
            "targets": cols,
        }

    return CampaignResult(
        config=_config_as_dict(cfg),
        thresholds={k: float(c.threshold) for k, c in trained.items()},
        model_reports={
            k: {
                "train_accuracy": c.meta.get("train_accuracy"),
                "val_accuracy": c.meta.get("val_accuracy"),
                "epochs_run": c.meta.get("epochs_run"),
            }
            for k, c in trained.items()
        },
        baseline_rates=baseline_rates,
        baseline_scores=baseline_scores,
        cells=cells,
        curves=curves,
        mean_scores=mean_scores,
        transfer=transfer,
        attack_sample_names=[s.name for s in attack_set],
    )


def _config_as_dict(cfg: CampaignConfig) -> dict:
    raw = asdict(cfg)
    raw["attacks"] = [asdict(a) for a in cfg.attacks]
    return raw
