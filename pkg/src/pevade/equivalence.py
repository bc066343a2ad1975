"""Sandbox-free check that an edited PE still maps to the same program.

Rather than executing anything, this encodes what the loader actually
reads: the PE signature must still be reachable through the 0x3c pointer,
every original section's meaningful content must still sit at its table
offset, and the table metadata (virtual layout, characteristics, entry
point) must be untouched.  Dead space the format ignores - DOS bytes,
alignment slack, overlay - is exempt by construction, and appended
sections are tolerated because the loader simply maps one region more.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import pe

_SIZE_OF_HEADERS_FIELD = 60


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ExemptRegion:
    label: str
    start: int
    end: int


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    checks: tuple[CheckResult, ...]
    exempt_regions: tuple[ExemptRegion, ...] = ()

    def failed(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]


def _optional_without_size_of_headers(raw: bytes) -> bytes:
    return raw[:_SIZE_OF_HEADERS_FIELD] + raw[_SIZE_OF_HEADERS_FIELD + 4 :]


def structural_equivalence(
    z: bytes, z2: bytes, *, names_exempt: bool = False
) -> EquivalenceReport:
    """Certify that z2 is a structure-preserving transformation of z.

    ``names_exempt`` declares a section-rename edit, the one manipulation
    whose effect would otherwise be indistinguishable from corruption.
    """
    a = pe.parse(z)
    b = pe.parse(z2)
    checks: list[CheckResult] = []
    exempt: list[ExemptRegion] = []

    checks.append(
        CheckResult(
            "pe-signature",
            True,
            f"signatures at {a.pe_offset:#x} and {b.pe_offset:#x}",
        )
    )

    header_problems = []
    if a.coff_machine != b.coff_machine:
        header_problems.append("machine")
    if a.coff_timestamp != b.coff_timestamp:
        header_problems.append("timestamp")
    if a.coff_symtab != b.coff_symtab:
        header_problems.append("symbol table words")
    if a.coff_characteristics != b.coff_characteristics:
        header_problems.append("characteristics")
    if b.num_sections < a.num_sections:
        header_problems.append("section count shrank")
    if len(a.optional_header) != len(b.optional_header):
        header_problems.append("optional header size")
    elif _optional_without_size_of_headers(
        a.optional_header
    ) != _optional_without_size_of_headers(b.optional_header):
        header_problems.append("optional header fields")
    checks.append(
        CheckResult(
            "header-fields",
            not header_problems,
            "; ".join(header_problems) if header_problems else "match up to "
            "pe_offset, size_of_headers, and section offsets",
        )
    )

    table_problems = []
    content_problems = []
    if b.num_sections >= a.num_sections:
        for i, (sa, sb) in enumerate(zip(a.sections, b.sections)):
            if sa.name != sb.name and not names_exempt:
                table_problems.append(f"section {i} renamed")
            if sa.virtual_address != sb.virtual_address:
                table_problems.append(f"section {i} virtual address")
            if sa.virtual_size != sb.virtual_size:
                table_problems.append(f"section {i} virtual size")
            if sa.characteristics != sb.characteristics:
                table_problems.append(f"section {i} characteristics")
            if sa.raw_size != sb.raw_size:
                table_problems.append(f"section {i} raw size")
                continue
            keep = sa.content_size
            if a.section_data[i][:keep] != b.section_data[i][:keep]:
                content_problems.append(f"section {i} content differs")
            if keep < sa.raw_size:
                label = sa.name.rstrip(b"\x00").decode("latin1")
                exempt.append(
                    ExemptRegion(
                        f"slack:{label}",
                        sb.physical_offset + keep,
                        sb.physical_offset + sa.raw_size,
                    )
                )
    else:
        table_problems.append("original sections missing")
    checks.append(
        CheckResult(
            "section-table",
            not table_problems,
            "; ".join(table_problems)
            if table_problems
            else f"{a.num_sections} original entries preserved"
            + (f", {b.num_sections - a.num_sections} appended" if b.num_sections > a.num_sections else ""),
        )
    )
    checks.append(
        CheckResult(
            "section-content",
            not content_problems,
            "; ".join(content_problems)
            if content_problems
            else "meaningful bytes identical at every resolved offset",
        )
    )

    report_b = pe.validate(b)
    checks.append(
        CheckResult(
            "alignment",
            report_b.ok,
            "; ".join(v.message for v in report_b.violations)
            if not report_b.ok
            else "format rules hold in the transformed file",
        )
    )

    checks.append(
        CheckResult(
            "entry-point",
            a.entry_point == b.entry_point,
            f"{a.entry_point:#x} -> {b.entry_point:#x}",
        )
    )

    if len(b.overlay) > 0:
        end = pe.total_size(b)
        exempt.append(ExemptRegion("overlay", end - len(b.overlay), end))

    return EquivalenceReport(
        equivalent=all(c.passed for c in checks),
        checks=tuple(checks),
        exempt_regions=tuple(exempt),
    )


def format_report(report: EquivalenceReport) -> str:
    lines = []
    for c in report.checks:
        status = "pass" if c.passed else "FAIL"
        lines.append(f"[{status}] {c.check_id}: {c.detail}")
    for region in report.exempt_regions:
        lines.append(
            f"[exempt] {region.label}: bytes [{region.start:#x}, {region.end:#x})"
        )
    verdict = "equivalent" if report.equivalent else "NOT equivalent"
    lines.append(f"verdict: {verdict}")
    return "\n".join(lines)
