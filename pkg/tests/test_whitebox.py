import numpy as np
import pytest

from pevade import equivalence, manipulations as m, models, whitebox
from pevade.models import nets


def brute_force_reconstruct(x_row, g_row, table):
    """Plain-loop oracle for the closest-positive rule."""
    direction = g_row / np.linalg.norm(g_row)
    best = None
    best_dist = np.inf
    for j in range(min(len(table), 256)):
        diff = table[j] - x_row
        along = float(direction @ diff)
        if along <= 0:
            continue
        dist = float(np.linalg.norm(table[j] - (x_row + direction * along)))
        if dist < best_dist:
            best_dist = dist
            best = j
    return best


class TestReconstructByte:
    def test_two_point_example(self):
        # byte 0 at (1,2), byte 1 at (1,5); straight-up gradient picks byte 1
        table = np.array([[1.0, 2.0], [1.0, 5.0]])
        assert whitebox.reconstruct_byte(np.array([1.0, 2.0]), np.array([0.0, 1.0]), table) == 1

    def test_nothing_ahead_returns_none(self):
        table = np.array([[1.0, 2.0], [1.0, 5.0]])
        out = whitebox.reconstruct_byte(np.array([2.0, 6.0]), np.array([0.0, 1.0]), table)
        assert out is None

    def test_zero_gradient_raises(self):
        table = np.zeros((4, 2))
        with pytest.raises(whitebox.ZeroGradient):
            whitebox.reconstruct_byte(np.array([0.0, 0.0]), np.array([0.0, 0.0]), table)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(14)
        agreements = 0
        none_cases = 0
        for _ in range(1000):
            table = rng.normal(0, 1, (257, 8))
            x = table[rng.integers(0, 256)]
            g = rng.normal(0, 1, 8)
            got = whitebox.reconstruct_byte(x, g, table)
            want = brute_force_reconstruct(x, g, table)
            assert got == want
            agreements += 1
            if want is None:
                none_cases += 1
        assert agreements == 1000

    def test_padding_row_never_selected(self):
        rng = np.random.default_rng(15)
        table = rng.normal(0, 1, (257, 4))
        table[256] = 1e6  # park the padding row far along every direction
        for _ in range(50):
            got = whitebox.reconstruct_byte(table[3], np.abs(rng.normal(0, 1, 4)), table)
            assert got != 256


class TestConfig:
    def test_rejects_nonpositive_budget(self):
        with pytest.raises(ValueError):
            whitebox.WhiteboxConfig(bytes_per_round=0).check()

    def test_zero_iterations_allowed_for_fgsm(self):
        whitebox.WhiteboxConfig(iterations=0).check()

    def test_byte_attack_needs_an_iteration(self, hier_model, malware_sample):
        with pytest.raises(ValueError):
            whitebox.attack(
                malware_sample.data, hier_model, "full-dos",
                whitebox.WhiteboxConfig(iterations=0),
            )


class TestByteAttack:
    def test_refuses_non_differentiable(self, handcrafted_model, malware_sample):
        with pytest.raises(models.NotDifferentiable):
            whitebox.attack(
                malware_sample.data, handcrafted_model, "full-dos",
                whitebox.WhiteboxConfig(iterations=1),
            )

    def test_changed_bytes_bounded_by_round_budget(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=16, iterations=6, seed=5)
        _, trace = whitebox.attack(malware_sample.data, hier_model, "full-dos", cfg)
        assert all(s.bytes_changed <= 16 for s in trace.steps)
        assert len(trace.steps) <= 6

    def test_trace_is_monotone_non_increasing(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=64, iterations=8, seed=6)
        _, trace = whitebox.attack(malware_sample.data, hier_model, "extend", cfg)
        scores = trace.scores()
        assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))

    def test_zero_gradient_model_changes_nothing(self, malware_sample):
        c = nets.init_params(nets.HIER_LIN_KIND, seed=0, window=1024)
        for key in c.params:
            c.params[key][:] = 0  # flat score surface: every gradient is zero
        cfg = whitebox.WhiteboxConfig(bytes_per_round=32, iterations=3, seed=7)
        adv, trace = whitebox.attack(malware_sample.data, c, "full-dos", cfg)
        assert all(s.bytes_changed == 0 for s in trace.steps)
        assert set(trace.scores()) == {0.5}
        prep = m.prepare_full_dos(malware_sample.data)
        # payload stays at its random initialization: file differs from z
        # only inside the mask
        keep = np.ones(len(adv), dtype=bool)
        keep[prep.mask.positions] = False
        a = np.frombuffer(adv, np.uint8)
        b = np.frombuffer(malware_sample.data, np.uint8)
        assert np.array_equal(a[keep], b[keep])

    def test_header_focused_model_has_zero_gradient_on_shift_region(
        self, small_corpus
    ):
        # a model whose pooled features all come from the header window
        # gives the shifted-in region no gradient at all, so the attack
        # leaves its payload untouched and the score never moves
        from pevade import pe

        sample = next(
            s for s in small_corpus
            if s.label == 1 and pe.parse(s.data).file_alignment <= 1024
        )
        c = nets.init_params(nets.MALCONV_KIND, seed=3, window=4000)
        c.params["conv_w"][:] = 0.0  # activations equal per window: first wins
        prep = m.prepare_shift(sample.data, 1024)
        X = models.embed(prep.base, c)
        g = models.gradient(X, c)
        in_window = prep.mask.positions[prep.mask.positions >= 500]
        in_window = in_window[in_window < c.window]
        assert len(in_window) > 0
        assert np.linalg.norm(g[in_window]) == 0.0
        cfg = whitebox.WhiteboxConfig(bytes_per_round=256, iterations=3, seed=4)
        _, trace = whitebox.attack(sample.data, c, "shift", cfg, request_size=1024)
        assert len(set(trace.scores())) == 1  # flat: nothing to optimize

    def test_output_is_structurally_equivalent(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=128, iterations=5, seed=8)
        for kind in ("full-dos", "extend", "shift", "partial-dos"):
            adv, _ = whitebox.attack(
                malware_sample.data, hier_model, kind, cfg,
                request_size=512 if kind != "shift" else 1024,
            )
            assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent

    def test_attack_lowers_score(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=256, iterations=12, seed=9)
        _, trace = whitebox.attack(
            malware_sample.data, hier_model, "extend", cfg, request_size=512
        )
        assert trace.final_score < trace.initial_score

    def test_expired_time_budget_is_recorded_not_dropped(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=64, iterations=50, seed=2)
        adv, trace = whitebox.attack(
            malware_sample.data, hier_model, "full-dos", cfg, time_budget=0.0
        )
        assert trace.timed_out
        assert len(trace.steps) < 50
        assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent

    def test_deterministic_given_seed(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=64, iterations=4, seed=10)
        a = whitebox.attack(malware_sample.data, hier_model, "full-dos", cfg)
        b = whitebox.attack(malware_sample.data, hier_model, "full-dos", cfg)
        assert a[0] == b[0]
        assert a[1].scores() == b[1].scores()

    def test_trace_serializes_to_iteration_score_lines(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(bytes_per_round=16, iterations=3, seed=11)
        _, trace = whitebox.attack(malware_sample.data, hier_model, "full-dos", cfg)
        lines = trace.to_lines()
        assert len(lines) == len(trace.steps)
        for line in lines:
            it, score = line.split(",")
            int(it)
            float(score)


class TestFgsm:
    def test_zero_iterations_is_identity(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(iterations=0)
        adv, trace = whitebox.fgsm_attack(malware_sample.data, hier_model, cfg)
        assert adv == malware_sample.data

    def test_reconstruction_of_unperturbed_rows_returns_original_bytes(
        self, malware_sample
    ):
        # a flat model has zero gradient everywhere, so sign steps are
        # no-ops and every masked row must map back to its own byte
        c = nets.init_params(nets.HIER_RELU_KIND, seed=1, window=1024)
        for key in c.params:
            if key != "embedding":
                c.params[key][:] = 0
        cfg = whitebox.WhiteboxConfig(iterations=2, seed=12)
        adv, _ = whitebox.fgsm_attack(
            malware_sample.data, c, cfg, padding_size=256, stop_on_evasion=False
        )
        assert adv == malware_sample.data + b"\x00" * 256

    def test_padding_appended_and_equivalent(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(iterations=3, seed=13)
        adv, trace = whitebox.fgsm_attack(
            malware_sample.data, hier_model, cfg, padding_size=512,
            stop_on_evasion=False,
        )
        assert len(adv) == len(malware_sample.data) + 512
        assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent

    def test_single_iteration_mode(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(iterations=1, seed=14)
        _, trace = whitebox.fgsm_attack(
            malware_sample.data, hier_model, cfg, padding_size=256
        )
        assert len(trace.steps) == 1

    def test_plain_gradient_step_variant(self, hier_model, malware_sample):
        cfg = whitebox.WhiteboxConfig(iterations=3, step_size=2.0, seed=15)
        adv, trace = whitebox.fgsm_attack(
            malware_sample.data, hier_model, cfg, padding_size=512,
            use_sign=False, stop_on_evasion=False,
        )
        assert len(trace.steps) == 3
        assert equivalence.structural_equivalence(malware_sample.data, adv).equivalent

    def test_refuses_non_differentiable(self, handcrafted_model, malware_sample):
        with pytest.raises(models.NotDifferentiable):
            whitebox.fgsm_attack(
                malware_sample.data, handcrafted_model, whitebox.WhiteboxConfig()
            )
