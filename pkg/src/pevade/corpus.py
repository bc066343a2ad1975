"""Synthetic PE corpus with a learnable malware/goodware split.

No real binaries are ever shipped or fetched: every file is built from
scratch, passes :func:`pevade.pe.validate`, and carries its class signal
in planted byte patterns.  "Malware" content is high-entropy with a fixed
binary motif scattered through it; "goodware" content is low-entropy
ASCII with a different motif.  The signal lives in both the header
padding and early section content so that windowed byte models can see it
regardless of their input size.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pe

MALWARE = 1
GOODWARE = 0

# Fixed 32-byte motifs planted per class; the repeated structure is what
# the toy convolutional models latch onto.
MALWARE_MOTIF = bytes.fromhex(
    "d9e417fb8c63a2ee5b90cf3471a8d6024fe3b175c88d1a96e45f27b3c09a6d81"
)
GOODWARE_MOTIF = b"standard library runtime v1.0.32"

_GOODWARE_ALPHABET = np.frombuffer(
    b" \r\n\t.,;etaoinshrdlucmfwypvbgkETAOIN0123", dtype=np.uint8
)

_DOS_STUB_MESSAGE = b"\x0e\x1f\xba\x0e\x00\xb4\x09\xcd\x21\xb8\x01\x4c\xcd\x21" + (
    b"This program cannot be run in DOS mode.\r\r\n$"
)

_SECTION_NAMES = (b".text", b".data", b".rdata", b".rsrc")
_SECTION_CHARACTERISTICS = (0x60000020, 0xC0000040, 0x40000040, 0x40000040)


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs for the generator; defaults give the standard 400-file corpus."""

    malware_count: int = 200
    goodware_count: int = 200
    size_range: tuple[int, int] = (2048, 32768)
    file_alignments: tuple[int, ...] = (512, 1024, 2048, 4096)
    pe_offset_range: tuple[int, int] = (124, 296)
    motif_spacing: int = 192
    overlay_fraction: float = 0.3
    seed: int = 7

    def check(self) -> None:
        if self.malware_count < 1 or self.goodware_count < 1:
            raise InvalidSpec("both classes must be present")
        lo, hi = self.pe_offset_range
        if lo < 64 or hi > 512 or lo > hi:
            raise InvalidSpec("pe_offset range must lie within [64, 512]")
        if not self.file_alignments:
            raise InvalidSpec("at least one file alignment is required")
        for a in self.file_alignments:
            if not pe.is_power_of_two(a):
                raise InvalidSpec(f"file alignment {a} is not a power of two")
        if self.size_range[0] < 1024 or self.size_range[0] > self.size_range[1]:
            raise InvalidSpec("size range must be ordered and at least 1024 bytes")
        if self.motif_spacing < 64:
            raise InvalidSpec("motif spacing below 64 leaves no room for filler")


@dataclass(frozen=True)
class Sample:
    name: str
    data: bytes
    label: int


def _class_filler(rng: np.random.Generator, n: int, label: int) -> np.ndarray:
    if n <= 0:
        return np.zeros(0, dtype=np.uint8)
    if label == MALWARE:
        return rng.integers(0, 256, n, dtype=np.uint8)
    return rng.choice(_GOODWARE_ALPHABET, n)


def _plant_motifs(
    rng: np.random.Generator, buf: np.ndarray, motif: bytes, spacing: int
) -> None:
    """Drop one motif copy into each ``spacing``-byte stripe of ``buf``."""
    m = np.frombuffer(motif, dtype=np.uint8)
    for start in range(0, len(buf) - len(m), spacing):
        limit = min(start + spacing, len(buf) - len(m))
        if limit <= start:
            break
        at = int(rng.integers(start, limit + 1))
        buf[at : at + len(m)] = m


def _build_optional_header(
    rng: np.random.Generator,
    entry_point: int,
    file_alignment: int,
    size_of_image: int,
    size_of_headers: int,
    code_size: int,
) -> bytes:
    opt = bytearray(240)
    struct.pack_into("<H", opt, 0, 0x20B)  # PE32+
    opt[2] = 14
    opt[3] = int(rng.integers(0, 40))
    struct.pack_into("<I", opt, 4, code_size)
    struct.pack_into("<I", opt, 8, code_size)
    struct.pack_into("<I", opt, 16, entry_point)
    struct.pack_into("<I", opt, 20, 0x1000)
    struct.pack_into("<Q", opt, 24, 0x140000000)
    struct.pack_into("<I", opt, 32, 0x1000)  # section alignment
    struct.pack_into("<I", opt, 36, file_alignment)
    struct.pack_into("<HH", opt, 40, 6, 0)
    struct.pack_into("<HH", opt, 48, 6, 0)
    struct.pack_into("<I", opt, 56, size_of_image)
    struct.pack_into("<I", opt, 60, size_of_headers)
    struct.pack_into("<H", opt, 68, 3)  # console subsystem
    struct.pack_into("<H", opt, 70, 0x8160)
    struct.pack_into("<Q", opt, 72, 0x100000)
    struct.pack_into("<Q", opt, 80, 0x1000)
    struct.pack_into("<Q", opt, 88, 0x100000)
    struct.pack_into("<Q", opt, 96, 0x1000)
    struct.pack_into("<I", opt, 108, 16)  # data directory count; all empty
    return bytes(opt)


def _build_file(rng: np.random.Generator, spec: CorpusSpec, label: int) -> bytes:
    alignment = int(rng.choice(np.asarray(spec.file_alignments)))
    pe_offset = int(rng.integers(spec.pe_offset_range[0], spec.pe_offset_range[1] + 1))
    target_size = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    motif = MALWARE_MOTIF if label == MALWARE else GOODWARE_MOTIF

    dos_header = bytearray(64)
    dos_header[0:2] = pe.MZ_MAGIC
    dos_header[2:60] = rng.integers(0, 64, 58, dtype=np.uint8).tobytes()
    struct.pack_into("<H", dos_header, 2, 0x90)
    struct.pack_into("<I", dos_header, 0x3C, pe_offset)

    stub = bytearray(pe_offset - 64)
    stub[: len(_DOS_STUB_MESSAGE)] = _DOS_STUB_MESSAGE[: len(stub)]

    n_sections = int(rng.integers(2, 4))
    header_extent = pe_offset + 4 + 20 + 240 + 40 * n_sections
    size_of_headers = pe.align_up(header_extent + 64, alignment)

    budget = max(target_size - size_of_headers, n_sections * alignment)
    units = np.ones(n_sections, dtype=np.int64)
    spare = max(budget // alignment - n_sections, 0)
    for _ in range(spare):
        units[int(rng.integers(0, n_sections))] += 1

    sections: list[pe.SectionEntry] = []
    contents: list[bytes] = []
    offset = size_of_headers
    va = 0x1000
    for i in range(n_sections):
        raw_size = int(units[i]) * alignment
        slack = int(rng.integers(0, min(raw_size // 2, 384) + 1))
        content_len = raw_size - slack
        body = np.zeros(raw_size, dtype=np.uint8)
        body[:content_len] = _class_filler(rng, content_len, label)
        _plant_motifs(rng, body[:content_len], motif, spec.motif_spacing)
        if rng.random() < 0.2:
            # bss-style entry: virtual size outruns the raw data.
            virtual_size = raw_size + int(rng.integers(1, 4096))
            body[:raw_size] = _class_filler(rng, raw_size, label)
            _plant_motifs(rng, body, motif, spec.motif_spacing)
        else:
            virtual_size = content_len
        sections.append(
            pe.SectionEntry(
                name=_SECTION_NAMES[i].ljust(8, b"\x00"),
                virtual_size=virtual_size,
                virtual_address=va,
                raw_size=raw_size,
                physical_offset=offset,
                characteristics=_SECTION_CHARACTERISTICS[i],
            )
        )
        contents.append(body.tobytes())
        offset += raw_size
        va = pe.align_up(va + max(virtual_size, 1), 0x1000)

    entry_point = sections[0].virtual_address + 16
    optional = _build_optional_header(
        rng,
        entry_point=entry_point,
        file_alignment=alignment,
        size_of_image=va,
        size_of_headers=size_of_headers,
        code_size=sections[0].raw_size,
    )

    padding = np.zeros(size_of_headers - header_extent, dtype=np.uint8)
    pad_fill = min(len(padding), 64 + len(padding) // 2)
    padding[:pad_fill] = _class_filler(rng, pad_fill, label)
    _plant_motifs(rng, padding, motif, spec.motif_spacing)

    overlay = b""
    if rng.random() < spec.overlay_fraction:
        overlay = rng.choice(_GOODWARE_ALPHABET, int(rng.integers(16, 1500))).tobytes()

    view = pe.PeFile(
        dos_header=bytes(dos_header),
        dos_stub=bytes(stub),
        coff_machine=0x8664,
        coff_timestamp=int(rng.integers(0, 2**32)),
        coff_symtab=b"\x00" * 8,
        coff_characteristics=0x0022,
        optional_header=optional,
        sections=tuple(sections),
        header_padding=padding.tobytes(),
        section_data=tuple(contents),
        section_gaps=(b"",) * n_sections,
        overlay=overlay,
    )
    return pe.serialize(view)


def generate_corpus(spec: CorpusSpec) -> list[Sample]:
    """Deterministic labeled corpus; every file parses and validates clean."""
    spec.check()
    samples: list[Sample] = []
    for label, count, prefix in (
        (MALWARE, spec.malware_count, "mal"),
        (GOODWARE, spec.goodware_count, "good"),
    ):
        for i in range(count):
            rng = np.random.default_rng([spec.seed, label, i])
            data = _build_file(rng, spec, label)
            samples.append(Sample(name=f"{prefix}_{i:04d}.bin", data=data, label=label))
    return samples


def save_corpus(samples: list[Sample], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        (out / s.name).write_bytes(s.data)
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "label"])
        for s in samples:
            writer.writerow([s.name, s.label])
    return out


def load_corpus(corpus_dir: str | Path) -> list[Sample]:
    root = Path(corpus_dir)
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise FileNotFoundError(f"no labels.csv under {root}")
    samples = []
    with open(labels_path, newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(
                Sample(
                    name=row["name"],
                    data=(root / row["name"]).read_bytes(),
                    label=int(row["label"]),
                )
            )
    return samples
