"""Query-only attacks: a genetic optimizer plus transfer evaluation.

The optimizer never sees model internals; all it may do is hand a
finished file to a scorer and read one number back.  Queries are metered
at that boundary.  Candidates live in [0, 1]^k and decode to payload
bytes (or, for the size-penalized padding variant, to how much of each
harvested benign section gets appended).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import manipulations as manips
from .manipulations import ManipulationKind, ManipulationVector
from .models import Classifier
from .whitebox import AttackTrace


class BudgetTooSmall(ValueError):
    pass


class EmptyBenignPool(ValueError):
    pass


class UncalibratedTarget(ValueError):
    pass


class GeneOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class GeneticConfig:
    population_size: int = 10
    query_budget: int = 3000
    mutation_prob: float = 0.05
    seed: int = 0
    crossover: str = "uniform"  # or "single-point"

    def check(self) -> None:
        if self.population_size < 2:
            raise ValueError("population size must be at least 2")
        if self.query_budget < self.population_size:
            raise BudgetTooSmall(
                f"budget {self.query_budget} cannot even evaluate one "
                f"population of {self.population_size}"
            )
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation probability must be within [0, 1]")
        if self.crossover not in ("uniform", "single-point"):
            raise ValueError(f"unknown crossover scheme {self.crossover!r}")


@dataclass(frozen=True)
class GammaConfig:
    """Size-penalized padding with content harvested from goodware."""

    penalty_weight: float = 1e-5
    benign_sections: tuple[bytes, ...] = ()
    max_sections: int = 100

    def check(self) -> None:
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be non-negative")
        if not self.benign_sections:
            raise EmptyBenignPool("no harvested benign sections to pad with")


class QueryScorer:
    """Thread-safe metered front door to a classifier (or any score fn)."""

    def __init__(self, score_fn: Callable[[bytes], float]):
        self._score_fn = score_fn
        self._lock = threading.Lock()
        self._queries = 0

    @classmethod
    def from_classifier(cls, c: Classifier) -> "QueryScorer":
        return cls(c.score)

    @property
    def queries(self) -> int:
        with self._lock:
            return self._queries

    def score(self, data: bytes) -> float:
        with self._lock:
            self._queries += 1
        return float(self._score_fn(data))


def genes_to_bytes(genes: np.ndarray) -> np.ndarray:
    """Scale unit-interval genes to byte values, rounding half up."""
    genes = np.asarray(genes, dtype=np.float64)
    if genes.size and (genes.min() < 0.0 or genes.max() > 1.0):
        raise GeneOutOfRange("genes must lie in [0, 1]")
    return np.floor(genes * 255.0 + 0.5).astype(np.uint8)


@dataclass
class _Candidate:
    genes: np.ndarray
    age: int
    fitness: float = float("inf")
    info: tuple = ()
    evaluated: bool = False


class _GeneticLoop:
    """Alg-style loop: evaluate, elitist-select, cross over, mutate."""

    def __init__(
        self,
        objective: Callable[[np.ndarray], tuple[float, tuple]],
        genome_size: int,
        cfg: GeneticConfig,
    ):
        cfg.check()
        self.objective = objective
        self.k = genome_size
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 51])
        self.queries = 0
        self.evaluations: list[tuple] = []
        self._age = 0

    def _new_candidate(self, genes: np.ndarray) -> _Candidate:
        self._age += 1
        return _Candidate(genes=genes, age=self._age)

    def _evaluate(self, pop: list[_Candidate]) -> None:
        for cand in pop:
            if cand.evaluated:
                continue
            if self.queries >= self.cfg.query_budget:
                break  # out of budget: stays at +inf and never wins selection
            fitness, info = self.objective(cand.genes)
            self.queries += 1
            cand.fitness = float(fitness)
            cand.info = info
            cand.evaluated = True
            self.evaluations.append((cand.fitness, *info))

    def _select(self, pool: list[_Candidate]) -> list[_Candidate]:
        pool = sorted(pool, key=lambda c: (c.fitness, c.age))
        return pool[: self.cfg.population_size]

    def _crossover(self, parents: list[_Candidate]) -> list[_Candidate]:
        n = self.cfg.population_size
        children = []
        for _ in range(n):
            ia, ib = self.rng.integers(0, len(parents), 2)
            a, b = parents[ia].genes, parents[ib].genes
            if self.cfg.crossover == "uniform":
                take = self.rng.random(self.k) < 0.5
                genes = np.where(take, a, b)
            else:
                cut = int(self.rng.integers(0, self.k + 1))
                genes = np.concatenate([a[:cut], b[cut:]])
            children.append(self._new_candidate(genes))
        return children

    def _mutate(self, pop: list[_Candidate]) -> None:
        for cand in pop:
            flip = self.rng.random(self.k) < self.cfg.mutation_prob
            if flip.any():
                fresh = self.rng.random(self.k)
                cand.genes = np.where(flip, fresh, cand.genes)

    def run(self, time_budget: float | None = None):
        started = time.monotonic()
        selected: list[_Candidate] = []
        offspring = [
            self._new_candidate(self.rng.random(self.k))
            for _ in range(self.cfg.population_size)
        ]
        best: _Candidate | None = None
        generations: list[tuple[int, float, float]] = []
        timed_out = False
        while self.queries < self.cfg.query_budget:
            # a deadline never cancels the first generation: timed-out runs
            # are recorded with whatever they managed to evaluate
            if (
                best is not None
                and time_budget is not None
                and time.monotonic() - started > time_budget
            ):
                timed_out = True
                break
            self._evaluate(offspring)
            selected = self._select(selected + offspring)
            top = selected[0]
            if best is None or top.fitness < best.fitness:
                best = top
            raw_score = best.info[0] if best.info else best.fitness
            generations.append((len(generations) + 1, best.fitness, raw_score))
            offspring = self._crossover(selected)
            self._mutate(offspring)
        if best is None:  # zero-generation runs cannot happen (budget >= N)
            raise BudgetTooSmall("no candidate was ever evaluated")
        return best, generations, timed_out


def genetic_attack(
    z: bytes,
    scorer: QueryScorer,
    kind: ManipulationKind | str,
    cfg: GeneticConfig,
    *,
    request_size: int = 512,
    padding_size: int = 10240,
    objective: Callable[[np.ndarray], tuple[float, tuple]] | None = None,
    time_budget: float | None = None,
) -> tuple[bytes, AttackTrace]:
    """Derivative-free byte attack over one manipulation's mask."""
    prepared = manips.build_prepared(
        kind, z, request_size=request_size, padding_size=padding_size
    )

    if objective is None:

        def objective(genes: np.ndarray) -> tuple[float, tuple]:
            candidate = prepared.apply(genes_to_bytes(genes).tobytes())
            return scorer.score(candidate), ()

    loop = _GeneticLoop(objective, prepared.payload_size, cfg)
    best, generations, timed_out = loop.run(time_budget)

    payload = genes_to_bytes(best.genes).tobytes()
    adv = prepared.apply(payload)
    trace = AttackTrace()
    for gen, fitness, _score in generations:
        trace.record(gen, fitness)
    trace.queries_used = loop.queries
    trace.timed_out = timed_out
    trace.payload = ManipulationVector(
        payload=payload, requested_size=prepared.requested_size
    )
    trace.extras["best_fitness"] = best.fitness
    trace.extras["score_steps"] = [score for _, _, score in generations]
    trace.extras["evaluations"] = loop.evaluations
    trace.finish(best.fitness, None)
    return adv, trace


def harvest_sections(
    samples: Sequence, *, name: bytes = b".data", limit: int = 100
) -> list[bytes]:
    """Collect up to ``limit`` matching section contents from goodware samples."""
    from . import pe

    pool: list[bytes] = []
    for sample in samples:
        data = sample.data if hasattr(sample, "data") else sample
        label = getattr(sample, "label", 0)
        if label != 0:
            continue
        view = pe.parse(data)
        for i in pe.section_by_name(view, name):
            content = view.section_data[i][: view.sections[i].content_size]
            if content:
                pool.append(content)
            if len(pool) >= limit:
                return pool
    return pool


def gamma_padding_attack(
    z: bytes,
    scorer: QueryScorer,
    gamma_cfg: GammaConfig,
    genetic_cfg: GeneticConfig,
    *,
    time_budget: float | None = None,
) -> tuple[bytes, AttackTrace]:
    """Padding attack whose objective charges for every injected byte.

    One gene per harvested section states what fraction of it to append;
    fitness is score plus penalty_weight times the injected byte count.
    """
    gamma_cfg.check()
    pool = list(gamma_cfg.benign_sections)[: gamma_cfg.max_sections]

    def decode_payload(genes: np.ndarray) -> bytes:
        parts = []
        for gene, section in zip(genes, pool):
            take = int(np.floor(float(gene) * len(section) + 0.5))
            if take > 0:
                parts.append(section[:take])
        return b"".join(parts)

    def objective(genes: np.ndarray) -> tuple[float, tuple]:
        if genes.min() < 0.0 or genes.max() > 1.0:
            raise GeneOutOfRange("genes must lie in [0, 1]")
        payload = decode_payload(genes)
        raw = scorer.score(z + payload)
        fitness = raw + gamma_cfg.penalty_weight * len(payload)
        return fitness, (raw, len(payload))

    loop = _GeneticLoop(objective, len(pool), genetic_cfg)
    best, generations, timed_out = loop.run(time_budget)

    payload = decode_payload(best.genes)
    adv = z + payload
    trace = AttackTrace()
    for gen, fitness, _score in generations:
        trace.record(gen, fitness)
    trace.queries_used = loop.queries
    trace.timed_out = timed_out
    trace.payload = ManipulationVector(payload=payload, requested_size=len(payload))
    trace.extras["best_fitness"] = best.fitness
    trace.extras["best_score"] = best.info[0]
    trace.extras["injected_bytes"] = best.info[1]
    trace.extras["score_steps"] = [score for _, _, score in generations]
    trace.extras["evaluations"] = loop.evaluations
    trace.finish(best.info[0], None)
    return adv, trace


def transfer_evaluate(
    crafted: Sequence[tuple[str, Sequence[bytes]]],
    targets: Sequence[tuple[str, Classifier]],
) -> tuple[np.ndarray, list[str], list[str]]:
    """Detection-rate matrix: crafted-on rows, evaluated-against columns."""
    for name, c in targets:
        if c.threshold is None:
            raise UncalibratedTarget(f"target {name} has no calibrated threshold")
    matrix = np.zeros((len(crafted), len(targets)))
    for i, (_, adv_set) in enumerate(crafted):
        for j, (_, target) in enumerate(targets):
            if len(adv_set) == 0:
                continue
            scores = target.score_batch(list(adv_set))
            matrix[i, j] = float((scores >= target.threshold).mean())
    return matrix, [name for name, _ in crafted], [name for name, _ in targets]
