"""Functionality-preserving PE edits and the byte masks they expose.

Every transform here rewrites only dead or relocatable space, so the
loader-visible program is unchanged: the DOS header and stub (which the
loader skips past), zero-filled gaps opened by moving offsets forward,
alignment slack inside sections, appended overlay bytes, renamed or
appended section-table entries.  Each byte-addressable transform also
yields an :class:`EditMask` telling an optimizer exactly which positions
it may touch.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import pe


class ManipulationError(ValueError):
    pass


class PayloadLengthMismatch(ManipulationError):
    pass


class ZeroRequest(ManipulationError):
    pass


class NoSections(ManipulationError):
    pass


class InsufficientHeaderSpace(ManipulationError):
    pass


class PeOffsetInsideDosHeader(ManipulationError):
    pass


class LengthMismatch(ManipulationError):
    pass


class ManipulationKind(str, Enum):
    FULL_DOS = "full-dos"
    EXTEND = "extend"
    SHIFT = "shift"
    PARTIAL_DOS = "partial-dos"
    PADDING = "padding"
    SLACK_SPACE = "slack"
    SECTION_INJECTION = "section-injection"
    HEADER_FIELDS = "header-fields"


BYTE_KINDS = (
    ManipulationKind.FULL_DOS,
    ManipulationKind.EXTEND,
    ManipulationKind.SHIFT,
    ManipulationKind.PARTIAL_DOS,
    ManipulationKind.PADDING,
    ManipulationKind.SLACK_SPACE,
)


@dataclass(frozen=True)
class ManipulationVector:
    """Payload bytes plus the pre-alignment size request (where one applies)."""

    payload: bytes
    requested_size: int = 0


@dataclass(frozen=True, eq=False)
class EditMask:
    """Boolean flag per byte position of the (already prepared) file."""

    editable: np.ndarray

    @cached_property
    def positions(self) -> np.ndarray:
        return np.flatnonzero(self.editable)

    @property
    def count(self) -> int:
        return int(self.editable.sum())

    def __len__(self) -> int:
        return len(self.editable)


def _mask_from_ranges(length: int, ranges: list[tuple[int, int]]) -> EditMask:
    flags = np.zeros(length, dtype=bool)
    for start, end in ranges:
        flags[start:end] = True
    return EditMask(editable=flags)


def round_to_alignment(requested: int, file_alignment: int) -> int:
    """Round a size request up to the next file-alignment multiple."""
    if file_alignment <= 0:
        raise ManipulationError("file_alignment must be positive")
    if requested <= 0:
        raise ZeroRequest("a zero-byte injection is meaningless")
    return pe.align_up(requested, file_alignment)


def _splice(base: bytes, mask: EditMask, payload: bytes) -> bytes:
    if len(payload) != mask.count:
        raise PayloadLengthMismatch(
            f"payload is {len(payload)} bytes but the mask has {mask.count} slots"
        )
    buf = np.frombuffer(base, dtype=np.uint8).copy()
    buf[mask.positions] = np.frombuffer(payload, dtype=np.uint8)
    return buf.tobytes()


@dataclass(frozen=True)
class Prepared:
    """A structure-adjusted file plus the mask an optimizer may write into.

    ``base`` already contains every offset fix-up; payload writes through
    :meth:`apply` are the only remaining degree of freedom.
    """

    kind: ManipulationKind
    base: bytes
    mask: EditMask
    requested_size: int = 0

    @property
    def payload_size(self) -> int:
        return self.mask.count

    def apply(self, payload: bytes) -> bytes:
        return _splice(self.base, self.mask, payload)

    def current_payload(self) -> bytes:
        buf = np.frombuffer(self.base, dtype=np.uint8)
        return buf[self.mask.positions].tobytes()


# --- DOS header rewrites ---------------------------------------------------


def _dos_ranges(pe_offset: int) -> list[tuple[int, int]]:
    return [(2, 60), (64, pe_offset)]


def full_dos_mask(z: bytes) -> EditMask:
    """Everything in the DOS header and stub except MZ and the PE pointer."""
    pe_offset = pe.read_pe_offset(z)
    if pe_offset < 64:
        raise PeOffsetInsideDosHeader(
            f"pe_offset {pe_offset:#x} leaves no DOS stub to edit"
        )
    pe.parse(z)
    return _mask_from_ranges(len(z), _dos_ranges(pe_offset))


def prepare_full_dos(z: bytes) -> Prepared:
    return Prepared(kind=ManipulationKind.FULL_DOS, base=bytes(z), mask=full_dos_mask(z))


def apply_full_dos(z: bytes, t: ManipulationVector) -> bytes:
    return prepare_full_dos(z).apply(t.payload)


def partial_dos_mask(z: bytes) -> EditMask:
    """The 58 legacy DOS-header bytes between MZ and the PE pointer."""
    pe.parse(z)
    return _mask_from_ranges(len(z), [(2, 60)])


def prepare_partial_dos(z: bytes) -> Prepared:
    return Prepared(
        kind=ManipulationKind.PARTIAL_DOS, base=bytes(z), mask=partial_dos_mask(z)
    )


def apply_partial_dos(z: bytes, t: ManipulationVector) -> bytes:
    return prepare_partial_dos(z).apply(t.payload)


# --- space-creating rewrites ------------------------------------------------


def _bump_section_offsets(
    buf: bytearray, table_off: int, sections: tuple[pe.SectionEntry, ...], delta: int
) -> None:
    for i, entry in enumerate(sections):
        if entry.physical_offset == 0 and entry.raw_size == 0:
            continue  # placeholder entries carry no file region
        field_at = table_off + i * pe.SECTION_ENTRY_SIZE + 20
        buf[field_at : field_at + 4] = (entry.physical_offset + delta).to_bytes(
            4, "little"
        )


def prepare_extend(z: bytes, requested_size: int) -> Prepared:
    """Grow the DOS stub by an aligned amount and open it all for editing."""
    view = pe.parse(z)
    inj = round_to_alignment(requested_size, view.file_alignment)
    v = view.pe_offset

    buf = bytearray(z[:v])
    buf += b"\x00" * inj
    buf += z[v:]
    pe.write_pe_offset(buf, v + inj)

    # Header offsets below are all displaced by the injection.
    opt_off = v + inj + 4 + pe.COFF_HEADER_SIZE
    buf[opt_off + 60 : opt_off + 64] = (view.size_of_headers + inj).to_bytes(4, "little")
    _bump_section_offsets(buf, opt_off + len(view.optional_header), view.sections, inj)

    base = bytes(buf)
    mask = _mask_from_ranges(len(base), _dos_ranges(v + inj))
    return Prepared(
        kind=ManipulationKind.EXTEND, base=base, mask=mask, requested_size=requested_size
    )


def apply_extend(z: bytes, t: ManipulationVector) -> bytes:
    return prepare_extend(z, t.requested_size).apply(t.payload)


def prepare_shift(z: bytes, requested_size: int) -> Prepared:
    """Push all section contents forward and edit the gap this opens."""
    view = pe.parse(z)
    order = view.data_order()
    if not order:
        raise NoSections("no section carries raw data to shift")
    inj = round_to_alignment(requested_size, view.file_alignment)
    v = view.sections[order[0]].physical_offset

    buf = bytearray(z[:v])
    buf += b"\x00" * inj
    buf += z[v:]
    table_off = view.pe_offset + 4 + pe.COFF_HEADER_SIZE + len(view.optional_header)
    _bump_section_offsets(buf, table_off, view.sections, inj)

    base = bytes(buf)
    mask = _mask_from_ranges(len(base), [(v, v + inj)])
    return Prepared(
        kind=ManipulationKind.SHIFT, base=base, mask=mask, requested_size=requested_size
    )


def apply_shift(z: bytes, t: ManipulationVector) -> bytes:
    return prepare_shift(z, t.requested_size).apply(t.payload)


def prepare_padding(z: bytes, size: int) -> Prepared:
    """Append ``size`` editable overlay bytes; no header field moves."""
    if size < 0:
        raise ManipulationError("padding size must be non-negative")
    pe.parse(z)
    base = bytes(z) + b"\x00" * size
    mask = _mask_from_ranges(len(base), [(len(z), len(base))])
    return Prepared(
        kind=ManipulationKind.PADDING, base=base, mask=mask, requested_size=size
    )


def apply_padding(z: bytes, t: ManipulationVector) -> bytes:
    if t.requested_size and t.requested_size != len(t.payload):
        raise PayloadLengthMismatch(
            f"padding payload of {len(t.payload)} bytes does not match the "
            f"requested size {t.requested_size}"
        )
    return prepare_padding(z, len(t.payload)).apply(t.payload)


# --- in-place dead space ----------------------------------------------------


def slack_mask(z: bytes) -> EditMask:
    """Alignment fill between each section's content and its raw end."""
    view = pe.parse(z)
    ranges = []
    for s in view.sections:
        if s.raw_size == 0:
            continue
        start = s.physical_offset + s.content_size
        end = s.physical_offset + s.raw_size
        if end > start:
            ranges.append((start, end))
    return _mask_from_ranges(len(z), ranges)


def prepare_slack(z: bytes) -> Prepared:
    return Prepared(kind=ManipulationKind.SLACK_SPACE, base=bytes(z), mask=slack_mask(z))


def apply_slack(z: bytes, t: ManipulationVector) -> bytes:
    return prepare_slack(z).apply(t.payload)


# --- table-level rewrites ---------------------------------------------------


def apply_section_injection(z: bytes, name: bytes, content: bytes) -> bytes:
    """Append a section entry plus its aligned content at end of file."""
    if len(name) > 8:
        raise LengthMismatch("section names are at most 8 bytes")
    view = pe.parse(z)
    if view.header_extent + pe.SECTION_ENTRY_SIZE > view.size_of_headers:
        raise InsufficientHeaderSpace(
            "the section table has no room for another 40-byte entry; apply "
            "an Extend first"
        )
    alignment = view.file_alignment
    raw_size = pe.align_up(len(content), alignment)
    if raw_size > 0:
        physical_offset = pe.align_up(len(z), alignment)
    else:
        physical_offset = 0
    va = 0x1000
    for s in view.sections:
        va = max(va, pe.align_up(s.virtual_address + max(s.virtual_size, 1), 0x1000))

    entry = pe.SectionEntry(
        name=name.ljust(8, b"\x00"),
        virtual_size=len(content),
        virtual_address=va,
        raw_size=raw_size,
        physical_offset=physical_offset,
        characteristics=0x40000040,
    )

    buf = bytearray(z)
    table_end = view.header_extent
    buf[table_end : table_end + pe.SECTION_ENTRY_SIZE] = entry.packed()
    coff_off = view.pe_offset + 4
    buf[coff_off + 2 : coff_off + 4] = (view.num_sections + 1).to_bytes(2, "little")
    if raw_size > 0:
        buf += b"\x00" * (physical_offset - len(z))
        buf += content
        buf += b"\x00" * (raw_size - len(content))
    return bytes(buf)


def apply_header_fields(z: bytes, new_names: list[bytes]) -> bytes:
    """Rewrite section names in place; everything else stays put."""
    view = pe.parse(z)
    if len(new_names) != view.num_sections:
        raise LengthMismatch(
            f"{len(new_names)} names for {view.num_sections} sections"
        )
    buf = bytearray(z)
    table_off = view.pe_offset + 4 + pe.COFF_HEADER_SIZE + len(view.optional_header)
    for i, name in enumerate(new_names):
        if len(name) > 8:
            raise LengthMismatch("section names are at most 8 bytes")
        at = table_off + i * pe.SECTION_ENTRY_SIZE
        buf[at : at + 8] = name.ljust(8, b"\x00")
    return bytes(buf)


# --- optimizer entry point --------------------------------------------------


def build_prepared(
    kind: ManipulationKind | str,
    z: bytes,
    *,
    request_size: int = 512,
    padding_size: int = 10240,
) -> Prepared:
    """Construct the (base, mask) pair an optimizer works against."""
    kind = ManipulationKind(kind)
    if kind is ManipulationKind.FULL_DOS:
        return prepare_full_dos(z)
    if kind is ManipulationKind.PARTIAL_DOS:
        return prepare_partial_dos(z)
    if kind is ManipulationKind.EXTEND:
        return prepare_extend(z, request_size)
    if kind is ManipulationKind.SHIFT:
        return prepare_shift(z, request_size)
    if kind is ManipulationKind.PADDING:
        return prepare_padding(z, padding_size)
    if kind is ManipulationKind.SLACK_SPACE:
        return prepare_slack(z)
    raise ManipulationError(f"{kind.value} is not a byte-addressable manipulation")
