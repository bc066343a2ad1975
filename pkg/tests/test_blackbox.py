import numpy as np
import pytest

from pevade import blackbox, equivalence, models
from pevade.blackbox import GammaConfig, GeneticConfig, QueryScorer


def cheap_scorer():
    """Deterministic stand-in classifier: cheap, query-metered, content-sensitive."""

    def score(data: bytes) -> float:
        arr = np.frombuffer(data, np.uint8)
        return float((arr.mean() % 97) / 97.0)

    return QueryScorer(score)


class TestDecode:
    def test_endpoints(self):
        out = blackbox.genes_to_bytes(np.array([0.0, 1.0]))
        assert out.tolist() == [0, 255]

    def test_half_rounds_up(self):
        assert blackbox.genes_to_bytes(np.array([0.5]))[0] == 128

    def test_out_of_range_rejected(self):
        with pytest.raises(blackbox.GeneOutOfRange):
            blackbox.genes_to_bytes(np.array([1.2]))

    def test_uniform_genes_give_near_uniform_bytes(self):
        rng = np.random.default_rng(3)
        draws = blackbox.genes_to_bytes(rng.random(100_000))
        counts = np.bincount(draws, minlength=256).astype(float)
        # 0 and 255 get half-width rounding bins
        expected = np.full(256, len(draws) / 255.0)
        expected[0] /= 2
        expected[255] /= 2
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 255 dof: mean 255, sd ~22.6; anything under 400 is comfortably uniform
        assert chi2 < 400.0


class TestQueryScorer:
    def test_counts_every_call(self, handcrafted_model, malware_sample):
        scorer = QueryScorer.from_classifier(handcrafted_model)
        for i in range(5):
            scorer.score(malware_sample.data)
        assert scorer.queries == 5


class TestGeneticAttack:
    def test_budget_must_cover_one_population(self, malware_sample):
        with pytest.raises(blackbox.BudgetTooSmall):
            GeneticConfig(population_size=10, query_budget=5).check()

    def test_exact_generation_and_query_accounting(self, malware_sample):
        scorer = cheap_scorer()
        cfg = GeneticConfig(population_size=10, query_budget=200, seed=1)
        _, trace = blackbox.genetic_attack(malware_sample.data, scorer, "partial-dos", cfg)
        assert len(trace.steps) == 20
        assert trace.queries_used == 200
        assert scorer.queries == 200

    def test_budget_equals_population_is_one_generation(self, malware_sample):
        scorer = cheap_scorer()
        cfg = GeneticConfig(population_size=8, query_budget=8, seed=2)
        _, trace = blackbox.genetic_attack(malware_sample.data, scorer, "partial-dos", cfg)
        assert len(trace.steps) == 1
        assert trace.queries_used == 8

    def test_ragged_budget_never_overspends(self, malware_sample):
        scorer = cheap_scorer()
        cfg = GeneticConfig(population_size=10, query_budget=25, seed=3)
        _, trace = blackbox.genetic_attack(malware_sample.data, scorer, "partial-dos", cfg)
        assert scorer.queries == 25
        assert trace.queries_used == min(25, len(trace.steps) * 10)

    def test_best_fitness_monotone(self, malware_sample):
        scorer = cheap_scorer()
        cfg = GeneticConfig(population_size=6, query_budget=120, seed=4)
        _, trace = blackbox.genetic_attack(malware_sample.data, scorer, "full-dos", cfg)
        fits = trace.scores()
        assert all(b <= a for a, b in zip(fits, fits[1:]))

    def test_every_evaluated_candidate_stays_in_unit_cube(self, malware_sample):
        seen = []

        def spying_objective(genes):
            seen.append((float(genes.min()), float(genes.max())))
            return float(genes.sum()), ()

        cfg = GeneticConfig(population_size=5, query_budget=100, seed=11)
        blackbox.genetic_attack(
            malware_sample.data, cheap_scorer(), "partial-dos", cfg,
            objective=spying_objective,
        )
        assert len(seen) == 100
        assert all(0.0 <= lo and hi <= 1.0 for lo, hi in seen)

    def test_output_equivalent_and_deterministic(self, malware_sample):
        cfg = GeneticConfig(population_size=6, query_budget=60, seed=5)
        a, ta = blackbox.genetic_attack(malware_sample.data, cheap_scorer(), "shift", cfg, request_size=1024)
        b, tb = blackbox.genetic_attack(malware_sample.data, cheap_scorer(), "shift", cfg, request_size=1024)
        assert a == b
        assert ta.scores() == tb.scores()
        assert equivalence.structural_equivalence(malware_sample.data, a).equivalent

    def test_expired_time_budget_still_records_a_generation(self, malware_sample):
        scorer = cheap_scorer()
        cfg = GeneticConfig(population_size=5, query_budget=500, seed=12)
        adv, trace = blackbox.genetic_attack(
            malware_sample.data, scorer, "partial-dos", cfg, time_budget=0.0
        )
        assert trace.timed_out
        assert len(trace.steps) == 1
        assert trace.queries_used == 5
        assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent

    def test_real_model_run_improves_fitness(self, hier_model, malware_sample):
        scorer = QueryScorer.from_classifier(hier_model)
        cfg = GeneticConfig(population_size=6, query_budget=90, seed=6)
        _, trace = blackbox.genetic_attack(
            malware_sample.data, scorer, "extend", cfg, request_size=512
        )
        assert trace.steps[-1].score <= trace.steps[0].score
        assert scorer.queries == 90


class TestGamma:
    def test_empty_pool_rejected(self):
        with pytest.raises(blackbox.EmptyBenignPool):
            GammaConfig(benign_sections=()).check()

    def test_objective_decomposition(self, small_corpus, malware_sample):
        pool = blackbox.harvest_sections(small_corpus, limit=16)
        assert pool
        scorer = cheap_scorer()
        g = GammaConfig(penalty_weight=1e-5, benign_sections=tuple(pool))
        _, trace = blackbox.gamma_padding_attack(
            malware_sample.data, scorer, g,
            GeneticConfig(population_size=6, query_budget=60, seed=7),
        )
        for fitness, raw, injected in trace.extras["evaluations"]:
            assert abs(fitness - (raw + 1e-5 * injected)) < 1e-9

    def test_zero_weight_reduces_to_plain_score(self, small_corpus, malware_sample):
        pool = blackbox.harvest_sections(small_corpus, limit=8)
        scorer = cheap_scorer()
        g = GammaConfig(penalty_weight=0.0, benign_sections=tuple(pool))
        _, trace = blackbox.gamma_padding_attack(
            malware_sample.data, scorer, g,
            GeneticConfig(population_size=6, query_budget=60, seed=8),
        )
        assert trace.extras["best_fitness"] == trace.extras["best_score"]

    def test_harvest_only_reads_goodware(self, small_corpus):
        pool = blackbox.harvest_sections(small_corpus, limit=100)
        good = [s for s in small_corpus if s.label == 0]
        for chunk in pool[:5]:
            assert any(chunk in g.data for g in good)

    def test_output_is_padding_only(self, small_corpus, malware_sample):
        pool = blackbox.harvest_sections(small_corpus, limit=8)
        adv, trace = blackbox.gamma_padding_attack(
            malware_sample.data, cheap_scorer(),
            GammaConfig(penalty_weight=1e-5, benign_sections=tuple(pool)),
            GeneticConfig(population_size=6, query_budget=30, seed=9),
        )
        assert adv[: len(malware_sample.data)] == malware_sample.data
        assert len(adv) - len(malware_sample.data) == trace.extras["injected_bytes"]
        assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent


class TestTransfer:
    def test_requires_calibrated_targets(self, hier_model, malware_sample):
        naked = models.Classifier(
            kind=hier_model.kind, window=hier_model.window, params=hier_model.params
        )
        with pytest.raises(blackbox.UncalibratedTarget):
            blackbox.transfer_evaluate(
                [("a", [malware_sample.data])], [("x", naked)]
            )

    def test_unmodified_set_gives_baseline_rates(self, hier_model, small_corpus):
        mal = [s.data for s in small_corpus if s.label == 1]
        matrix, rows, cols = blackbox.transfer_evaluate(
            [("none", mal)], [("hier", hier_model)]
        )
        scores = hier_model.score_batch(mal)
        expected = float((scores >= hier_model.threshold).mean())
        assert matrix[0, 0] == expected

    def test_surrogate_equals_target_is_whitebox_rate(
        self, hier_model, handcrafted_model, small_corpus
    ):
        mal = [s.data for s in small_corpus if s.label == 1][:6]
        from pevade import whitebox

        adv = [
            whitebox.attack(
                z, hier_model, "extend",
                whitebox.WhiteboxConfig(bytes_per_round=128, iterations=6, seed=i),
            )[0]
            for i, z in enumerate(mal)
        ]
        matrix, rows, cols = blackbox.transfer_evaluate(
            [("hier", adv)], [("hier", hier_model), ("hand", handcrafted_model)]
        )
        scores = hier_model.score_batch(adv)
        assert matrix[0, 0] == float((scores >= hier_model.threshold).mean())
