import numpy as np
import pytest

from pevade import corpus, pe


def test_generation_is_deterministic():
    spec = corpus.CorpusSpec(malware_count=6, goodware_count=6, seed=42)
    a = corpus.generate_corpus(spec)
    b = corpus.generate_corpus(spec)
    assert [(s.name, s.data, s.label) for s in a] == [
        (s.name, s.data, s.label) for s in b
    ]


def test_every_file_parses_and_validates(small_corpus):
    for sample in small_corpus:
        assert pe.validate(pe.parse(sample.data)).ok


def test_both_classes_and_counts():
    spec = corpus.CorpusSpec(malware_count=5, goodware_count=7, seed=0)
    samples = corpus.generate_corpus(spec)
    assert sum(s.label == corpus.MALWARE for s in samples) == 5
    assert sum(s.label == corpus.GOODWARE for s in samples) == 7


def test_pe_offsets_stay_in_requested_range(small_corpus):
    for sample in small_corpus:
        offset = pe.parse(sample.data).pe_offset
        assert 124 <= offset <= 296


def test_slack_regions_are_zero_filled(small_corpus):
    saw_slack = False
    for sample in small_corpus:
        view = pe.parse(sample.data)
        for entry, data in zip(view.sections, view.section_data):
            keep = entry.content_size
            if keep < entry.raw_size:
                saw_slack = True
                assert data[keep:] == b"\x00" * (entry.raw_size - keep)
    assert saw_slack


def test_rejects_single_class_spec():
    with pytest.raises(corpus.InvalidSpec):
        corpus.CorpusSpec(malware_count=0).check()


def test_rejects_pe_offset_range_outside_bounds():
    with pytest.raises(corpus.InvalidSpec):
        corpus.CorpusSpec(pe_offset_range=(32, 128)).check()
    with pytest.raises(corpus.InvalidSpec):
        corpus.CorpusSpec(pe_offset_range=(128, 600)).check()


def test_save_and_load_round_trip(tmp_path, small_corpus):
    subset = small_corpus[:5]
    corpus.save_corpus(subset, tmp_path / "c")
    loaded = corpus.load_corpus(tmp_path / "c")
    assert [(s.name, s.data, s.label) for s in loaded] == [
        (s.name, s.data, s.label) for s in subset
    ]


def test_class_content_is_separable_by_entropy(small_corpus):
    # the planted signal: malware sections run hot, goodware stays texty
    def mean_entropy(sample):
        view = pe.parse(sample.data)
        ents = []
        for data in view.section_data:
            if not data:
                continue
            counts = np.bincount(np.frombuffer(data, np.uint8), minlength=256)
            p = counts[counts > 0] / counts.sum()
            ents.append(float(-(p * np.log2(p)).sum()))
        return np.mean(ents)

    mal = [mean_entropy(s) for s in small_corpus if s.label == corpus.MALWARE]
    good = [mean_entropy(s) for s in small_corpus if s.label == corpus.GOODWARE]
    assert min(mal) > max(good)
