import numpy as np

from pevade import equivalence, manipulations as m, pe
from .conftest import payload_rng


def test_identity_is_equivalent(malware_sample):
    report = equivalence.structural_equivalence(malware_sample.data, malware_sample.data)
    assert report.equivalent
    assert all(c.passed for c in report.checks)


def test_extend_with_random_payload_is_equivalent(malware_sample):
    rng = payload_rng(20)
    prep = m.prepare_extend(malware_sample.data, 512)
    for _ in range(5):
        payload = rng.integers(0, 256, prep.payload_size, dtype=np.uint8).tobytes()
        assert equivalence.structural_equivalence(
            malware_sample.data, prep.apply(payload)
        ).equivalent


def test_flipping_one_section_byte_fails_content_check(malware_sample):
    z = malware_sample.data
    view = pe.parse(z)
    entry = view.sections[0]
    raw = bytearray(z)
    raw[entry.physical_offset] ^= 0xFF
    report = equivalence.structural_equivalence(z, bytes(raw))
    assert not report.equivalent
    failed = {c.check_id for c in report.failed()}
    assert "section-content" in failed


def test_slack_byte_flip_is_exempt(small_corpus):
    sample = next(s for s in small_corpus if m.slack_mask(s.data).count > 0)
    pos = int(m.slack_mask(sample.data).positions[0])
    raw = bytearray(sample.data)
    raw[pos] ^= 0x55
    report = equivalence.structural_equivalence(sample.data, bytes(raw))
    assert report.equivalent
    assert any(r.label.startswith("slack:") for r in report.exempt_regions)


def test_entry_point_change_detected(malware_sample):
    z = malware_sample.data
    view = pe.parse(z)
    out = pe.serialize(view.with_entry_point(view.entry_point + 4))
    report = equivalence.structural_equivalence(z, out)
    assert not report.equivalent
    assert "entry-point" in {c.check_id for c in report.failed()}


def test_virtual_address_change_detected(malware_sample):
    import dataclasses

    z = malware_sample.data
    view = pe.parse(z)
    moved = dataclasses.replace(
        view,
        sections=(
            dataclasses.replace(
                view.sections[0], virtual_address=view.sections[0].virtual_address + 0x1000
            ),
        )
        + view.sections[1:],
    )
    report = equivalence.structural_equivalence(z, pe.serialize(moved))
    assert "section-table" in {c.check_id for c in report.failed()}


def test_dropping_a_section_fails(malware_sample):
    import dataclasses

    z = malware_sample.data
    view = pe.parse(z)
    # physically keep the bytes but unregister the last section
    shrunk = dataclasses.replace(
        view,
        sections=view.sections[:-1],
        section_data=view.section_data[:-1],
        section_gaps=view.section_gaps[:-1],
    )
    report = equivalence.structural_equivalence(z, pe.serialize(shrunk))
    assert not report.equivalent


def test_report_text_has_verdict_line(malware_sample):
    report = equivalence.structural_equivalence(malware_sample.data, malware_sample.data)
    text = equivalence.format_report(report)
    assert text.splitlines()[-1] == "verdict: equivalent"


def test_oracle_is_manipulation_agnostic(small_corpus):
    """One oracle call per manipulation, never told which one ran."""
    rng = payload_rng(21)
    sample = next(s for s in small_corpus if m.slack_mask(s.data).count > 0)
    z = sample.data
    outputs = []
    for kind in ("full-dos", "extend", "shift", "partial-dos", "padding", "slack"):
        prep = m.build_prepared(kind, z, request_size=512, padding_size=333)
        outputs.append(
            prep.apply(rng.integers(0, 256, prep.payload_size, np.uint8).tobytes())
        )
    outputs.append(m.apply_section_injection(z, b".x", b"abc" * 100))
    for out in outputs:
        assert equivalence.structural_equivalence(z, out).equivalent
