"""Byte-exact parsing, validation, and re-serialization of Windows PE files.

The model is deliberately shallow: a file is decomposed into the regions
that matter for header and section surgery (DOS header, DOS stub, COFF
header, optional header, section table, section data, overlay), and every
field the toolkit does not understand is carried as opaque bytes.  That is
what makes ``serialize(parse(b)) == b`` hold bit for bit, and it is what
lets editing code move regions around without disturbing fields it never
looked at.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

MZ_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
DOS_HEADER_SIZE = 64
PE_OFFSET_FIELD = 0x3C
COFF_HEADER_SIZE = 20
SECTION_ENTRY_SIZE = 40

# Optional-header field offsets shared by PE32 and PE32+.
_OPT_ENTRY_POINT = 16
_OPT_FILE_ALIGNMENT = 36
_OPT_SIZE_OF_IMAGE = 56
_OPT_SIZE_OF_HEADERS = 60
_MIN_OPTIONAL_SIZE = 64


class PeError(ValueError):
    """Base class for structural PE failures."""


class MalformedMagic(PeError):
    pass


class BadPeOffset(PeError):
    pass


class MissingPeSignature(PeError):
    pass


class TruncatedHeader(PeError):
    pass


class OverlappingSections(PeError):
    pass


def _u16(b: bytes, off: int) -> int:
    return int.from_bytes(b[off : off + 2], "little")


def _u32(b: bytes, off: int) -> int:
    return int.from_bytes(b[off : off + 4], "little")


def _put_u32(buf: bytearray, off: int, value: int) -> None:
    buf[off : off + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")


def read_pe_offset(b: bytes) -> int:
    """Little-endian 4-byte pointer at 0x3c locating the PE signature."""
    if len(b) < DOS_HEADER_SIZE:
        raise TruncatedHeader("file shorter than the 64-byte DOS header")
    return _u32(b, PE_OFFSET_FIELD)


def write_pe_offset(buf: bytearray, value: int) -> None:
    _put_u32(buf, PE_OFFSET_FIELD, value)


def align_up(n: int, alignment: int) -> int:
    """Smallest multiple of ``alignment`` that is >= n (0 stays 0)."""
    if alignment <= 0:
        raise ValueError("alignment must be positive")
    return ((n + alignment - 1) // alignment) * alignment


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SectionEntry:
    """One 40-byte row of the section table.

    ``misc`` carries the relocation/line-number words this toolkit never
    interprets, so repacking an entry is lossless.
    """

    name: bytes
    virtual_size: int
    virtual_address: int
    raw_size: int
    physical_offset: int
    characteristics: int
    misc: bytes = b"\x00" * 12

    def packed(self) -> bytes:
        name = self.name[:8].ljust(8, b"\x00")
        return (
            name
            + struct.pack(
                "<IIII",
                self.virtual_size,
                self.virtual_address,
                self.raw_size,
                self.physical_offset,
            )
            + self.misc
            + struct.pack("<I", self.characteristics)
        )

    @property
    def content_size(self) -> int:
        """Meaningful bytes of the raw region; the rest is alignment slack."""
        return min(self.raw_size, self.virtual_size)

    @classmethod
    def unpack(cls, raw: bytes) -> "SectionEntry":
        vsize, vaddr, rsize, poff = struct.unpack_from("<IIII", raw, 8)
        return cls(
            name=bytes(raw[0:8]),
            virtual_size=vsize,
            virtual_address=vaddr,
            raw_size=rsize,
            physical_offset=poff,
            characteristics=struct.unpack_from("<I", raw, 36)[0],
            misc=bytes(raw[24:36]),
        )


@dataclass(frozen=True)
class PeFile:
    """Lossless structural view of one PE file.

    Values are immutable; editing means building a new value (``replace``
    or the ``with_*`` helpers) and calling :func:`serialize`.
    """

    dos_header: bytes
    dos_stub: bytes
    coff_machine: int
    coff_timestamp: int
    coff_symtab: bytes
    coff_characteristics: int
    optional_header: bytes
    sections: tuple[SectionEntry, ...]
    header_padding: bytes
    section_data: tuple[bytes, ...]
    section_gaps: tuple[bytes, ...]
    overlay: bytes

    @property
    def pe_offset(self) -> int:
        return DOS_HEADER_SIZE + len(self.dos_stub)

    @property
    def num_sections(self) -> int:
        return len(self.sections)

    @property
    def entry_point(self) -> int:
        return _u32(self.optional_header, _OPT_ENTRY_POINT)

    @property
    def file_alignment(self) -> int:
        return _u32(self.optional_header, _OPT_FILE_ALIGNMENT)

    @property
    def size_of_image(self) -> int:
        return _u32(self.optional_header, _OPT_SIZE_OF_IMAGE)

    @property
    def size_of_headers(self) -> int:
        return _u32(self.optional_header, _OPT_SIZE_OF_HEADERS)

    @property
    def header_extent(self) -> int:
        """File offset one past the last section-table entry."""
        return (
            self.pe_offset
            + len(PE_SIGNATURE)
            + COFF_HEADER_SIZE
            + len(self.optional_header)
            + self.num_sections * SECTION_ENTRY_SIZE
        )

    def _with_optional_u32(self, field_offset: int, value: int) -> "PeFile":
        opt = bytearray(self.optional_header)
        _put_u32(opt, field_offset, value)
        return replace(self, optional_header=bytes(opt))

    def with_size_of_headers(self, value: int) -> "PeFile":
        return self._with_optional_u32(_OPT_SIZE_OF_HEADERS, value)

    def with_file_alignment(self, value: int) -> "PeFile":
        return self._with_optional_u32(_OPT_FILE_ALIGNMENT, value)

    def with_entry_point(self, value: int) -> "PeFile":
        return self._with_optional_u32(_OPT_ENTRY_POINT, value)

    def data_order(self) -> list[int]:
        """Indices of sections with raw data, in file-offset order."""
        return sorted(
            (i for i, s in enumerate(self.sections) if s.raw_size > 0),
            key=lambda i: (self.sections[i].physical_offset, i),
        )


def parse(b: bytes) -> PeFile:
    """Decompose ``b`` into a :class:`PeFile`, attributing every byte.

    Raises MalformedMagic, BadPeOffset, MissingPeSignature,
    TruncatedHeader, or OverlappingSections.  Softer format rules
    (alignment multiples, size_of_headers consistency) are the business of
    :func:`validate`, not of the parser.
    """
    if len(b) < 2 or bytes(b[0:2]) != MZ_MAGIC:
        raise MalformedMagic("missing MZ signature")
    if len(b) < DOS_HEADER_SIZE:
        raise TruncatedHeader("file shorter than the 64-byte DOS header")
    pe_offset = _u32(b, PE_OFFSET_FIELD)
    if pe_offset < DOS_HEADER_SIZE or pe_offset + len(PE_SIGNATURE) > len(b):
        raise BadPeOffset(f"pe_offset {pe_offset:#x} outside usable range")
    if bytes(b[pe_offset : pe_offset + 4]) != PE_SIGNATURE:
        raise MissingPeSignature(f"no PE signature at {pe_offset:#x}")

    coff_off = pe_offset + len(PE_SIGNATURE)
    if coff_off + COFF_HEADER_SIZE > len(b):
        raise TruncatedHeader("COFF header extends past end of file")
    machine = _u16(b, coff_off)
    num_sections = _u16(b, coff_off + 2)
    timestamp = _u32(b, coff_off + 4)
    symtab = bytes(b[coff_off + 8 : coff_off + 16])
    optional_size = _u16(b, coff_off + 16)
    characteristics = _u16(b, coff_off + 18)

    opt_off = coff_off + COFF_HEADER_SIZE
    if optional_size < _MIN_OPTIONAL_SIZE:
        raise TruncatedHeader(
            f"optional header of {optional_size} bytes cannot hold layout fields"
        )
    if opt_off + optional_size > len(b):
        raise TruncatedHeader("optional header extends past end of file")
    optional = bytes(b[opt_off : opt_off + optional_size])

    table_off = opt_off + optional_size
    table_end = table_off + num_sections * SECTION_ENTRY_SIZE
    if table_end > len(b):
        raise TruncatedHeader("section table extends past end of file")
    sections = tuple(
        SectionEntry.unpack(b[table_off + i * SECTION_ENTRY_SIZE : table_off + (i + 1) * SECTION_ENTRY_SIZE])
        for i in range(num_sections)
    )

    data = [b""] * num_sections
    gaps = [b""] * num_sections
    order = sorted(
        (i for i, s in enumerate(sections) if s.raw_size > 0),
        key=lambda i: (sections[i].physical_offset, i),
    )
    header_padding = b""
    pos = table_end
    for rank, i in enumerate(order):
        s = sections[i]
        if s.physical_offset < pos:
            raise OverlappingSections(
                f"section {i} raw region starts at {s.physical_offset:#x}, "
                f"inside the region ending at {pos:#x}"
            )
        end = s.physical_offset + s.raw_size
        if end > len(b):
            raise TruncatedHeader(f"section {i} raw region extends past end of file")
        gap = bytes(b[pos : s.physical_offset])
        if rank == 0:
            header_padding = gap
        else:
            gaps[i] = gap
        data[i] = bytes(b[s.physical_offset : end])
        pos = end
    if not order:
        header_padding = bytes(b[table_end:])
        pos = len(b)

    return PeFile(
        dos_header=bytes(b[0:DOS_HEADER_SIZE]),
        dos_stub=bytes(b[DOS_HEADER_SIZE:pe_offset]),
        coff_machine=machine,
        coff_timestamp=timestamp,
        coff_symtab=symtab,
        coff_characteristics=characteristics,
        optional_header=optional,
        sections=sections,
        header_padding=header_padding,
        section_data=tuple(data),
        section_gaps=tuple(gaps),
        overlay=bytes(b[pos:]),
    )


def serialize(p: PeFile) -> bytes:
    """Re-emit the file; the exact inverse of :func:`parse` for untouched values.

    Section data is laid down at each entry's physical_offset; any room a
    relocation opened up is zero-filled, and collisions raise
    OverlappingSections.
    """
    if len(p.dos_header) != DOS_HEADER_SIZE:
        raise TruncatedHeader("DOS header must be exactly 64 bytes")
    if len(p.section_data) != p.num_sections or len(p.section_gaps) != p.num_sections:
        raise ValueError("section_data/section_gaps must parallel the section table")

    out = bytearray(p.dos_header)
    write_pe_offset(out, p.pe_offset)
    out += p.dos_stub
    out += PE_SIGNATURE
    out += struct.pack("<HHI", p.coff_machine, p.num_sections, p.coff_timestamp)
    out += p.coff_symtab[:8].ljust(8, b"\x00")
    out += struct.pack("<HH", len(p.optional_header), p.coff_characteristics)
    out += p.optional_header
    for entry in p.sections:
        out += entry.packed()
    out += p.header_padding

    for i in p.data_order():
        entry = p.sections[i]
        data = p.section_data[i]
        if len(data) != entry.raw_size:
            raise ValueError(
                f"section {i} data is {len(data)} bytes but raw_size says {entry.raw_size}"
            )
        gap = p.section_gaps[i]
        if len(out) + len(gap) > entry.physical_offset:
            raise OverlappingSections(
                f"section {i} at {entry.physical_offset:#x} collides with bytes "
                f"already written up to {len(out) + len(gap):#x}"
            )
        out += gap
        out += b"\x00" * (entry.physical_offset - len(out))
        out += data
    out += p.overlay
    return bytes(out)


class Violation(NamedTuple):
    """(rule-id, offset, message) triple."""

    rule: str
    offset: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...]

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


def validate(p: PeFile) -> ValidationReport:
    """Report every format-rule violation; empty report means ok."""
    found: list[Violation] = []
    alignment = p.file_alignment

    if not is_power_of_two(alignment):
        found.append(
            Violation(
                "file-alignment",
                p.pe_offset + 4 + COFF_HEADER_SIZE + _OPT_FILE_ALIGNMENT,
                f"file_alignment {alignment} is not a power of two",
            )
        )
    else:
        if p.size_of_headers % alignment != 0:
            found.append(
                Violation(
                    "header-size-multiple",
                    p.pe_offset + 4 + COFF_HEADER_SIZE + _OPT_SIZE_OF_HEADERS,
                    f"size_of_headers {p.size_of_headers} is not a multiple of "
                    f"file_alignment {alignment}",
                )
            )
        for i, s in enumerate(p.sections):
            if s.raw_size > 0 and s.physical_offset % alignment != 0:
                found.append(
                    Violation(
                        "alignment",
                        s.physical_offset,
                        f"section {i} raw offset {s.physical_offset:#x} is not a "
                        f"multiple of file_alignment {alignment}",
                    )
                )

    if p.size_of_headers < p.header_extent:
        found.append(
            Violation(
                "header-size",
                p.pe_offset + 4 + COFF_HEADER_SIZE + _OPT_SIZE_OF_HEADERS,
                f"size_of_headers {p.size_of_headers} is below the actual header "
                f"extent {p.header_extent}",
            )
        )

    regions = []
    for i, s in enumerate(p.sections):
        if s.raw_size == 0:
            continue
        if s.physical_offset < p.size_of_headers:
            found.append(
                Violation(
                    "section-start",
                    s.physical_offset,
                    f"section {i} starts at {s.physical_offset:#x}, before "
                    f"size_of_headers {p.size_of_headers:#x}",
                )
            )
        regions.append((s.physical_offset, s.physical_offset + s.raw_size, i))
    regions.sort()
    for (start_a, end_a, i), (start_b, _end_b, j) in zip(regions, regions[1:]):
        if start_b < end_a:
            found.append(
                Violation(
                    "section-overlap",
                    start_b,
                    f"sections {i} and {j} raw regions overlap",
                )
            )

    return ValidationReport(ok=not found, violations=tuple(found))


def validate_bytes(b: bytes) -> ValidationReport:
    return validate(parse(b))


def total_size(p: PeFile) -> int:
    """Length serialize(p) will produce, without materializing it."""
    size = p.header_extent + len(p.header_padding)
    for i in p.data_order():
        entry = p.sections[i]
        size = max(size + len(p.section_gaps[i]), entry.physical_offset) + entry.raw_size
    return size + len(p.overlay)


def section_by_name(p: PeFile, name: bytes) -> Iterable[int]:
    padded = name[:8].ljust(8, b"\x00")
    for i, s in enumerate(p.sections):
        if s.name == padded:
            yield i
