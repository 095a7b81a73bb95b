"""Bit-level model of a 2D associative processor.

Cells are stored column-major: ``cols[c]`` is a Python int whose bit ``r`` is
the cell at row ``r``. A compare or write then costs a handful of big-int
operations regardless of the row count, which keeps 2048-row instances fast.

Patterns passed to :meth:`ApState.match` and :meth:`ApState.write` are
sequences of ``(column, bit)`` pairs. They set the key/mask registers the
same way a controller would; the int-based :meth:`compare` and
:meth:`masked_write` wrappers accept raw register values instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, LayoutConflictError, PrecisionOverflowError

Pattern = Sequence[tuple[int, int]]


@dataclass(frozen=True)
class ColumnField:
    offset: int
    width: int
    signed: bool = False

    def __post_init__(self):
        if self.width < 1 or self.offset < 0:
            raise InvalidArgument(f"bad field offset={self.offset} width={self.width}")

    @property
    def end(self) -> int:
        return self.offset + self.width

    def col(self, i: int) -> int:
        return self.offset + i

    def view(self, shift: int, width: int | None = None, signed: bool = False) -> "ColumnField":
        """Re-address the field ``shift`` bits up; used for constant right shifts."""
        if width is None:
            width = self.width - shift
        return ColumnField(self.offset + shift, width, signed)

    def overlaps(self, other: "ColumnField") -> bool:
        return self.offset < other.end and other.offset < self.end

    def fits(self, value: int) -> bool:
        if self.signed:
            return -(1 << (self.width - 1)) <= value < (1 << (self.width - 1))
        return 0 <= value < (1 << self.width)


@dataclass(frozen=True)
class Counters:
    compares: int = 0
    writes: int = 0
    compare_cells: int = 0
    write_cells: int = 0

    @property
    def cycles(self) -> int:
        return self.compares + self.writes

    def __sub__(self, other: "Counters") -> "Counters":
        return Counters(self.compares - other.compares, self.writes - other.writes,
                        self.compare_cells - other.compare_cells,
                        self.write_cells - other.write_cells)


def _bits_to_int(bits: np.ndarray) -> int:
    packed = np.packbits(bits.astype(np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


class ApState:
    """CAM bit matrix with key/mask/tag registers in both dimensions."""

    def __init__(self, rows: int, cols: int, zero_col: int | None = None,
                 carry_col: int | None = None):
        if rows < 1 or cols < 1:
            raise InvalidArgument(f"AP dimensions must be positive, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        self.all_rows = (1 << rows) - 1
        self._cells = [0] * cols
        # column guaranteed to stay zero, used for zero-extension of operands
        self.zero_col = zero_col
        self.carry_col = carry_col
        self._nbytes = (rows + 7) // 8
        self.tag = 0
        self.tag2 = 0
        self._pattern: tuple = ()
        self.key2 = 0
        self.mask2 = 0
        self.compares = 0
        self.writes = 0
        self.compare_cells = 0
        self.write_cells = 0
        self.trace: Callable[[dict], None] | None = None

    # -- registers -------------------------------------------------------
    @property
    def key(self) -> int:
        return sum(1 << c for c, b in self._pattern if b)

    @property
    def mask(self) -> int:
        """Set bits are the columns taking part in the last compare."""
        return sum(1 << c for c, _ in self._pattern)

    # -- instrumentation -------------------------------------------------
    def _emit(self, kind: str, dim: str, key: int, mask: int, tag: int):
        self.trace({
            "cycle": self.compares + self.writes,
            "kind": kind,
            "dimension": dim,
            "key": key,
            "mask": mask,
            "tag_popcount": bin(tag).count("1"),
        })

    def snapshot_counters(self) -> Counters:
        return Counters(self.compares, self.writes, self.compare_cells, self.write_cells)

    def reset_counters(self):
        self.compares = self.writes = 0
        self.compare_cells = self.write_cells = 0

    # -- column dimension --------------------------------------------------
    def match(self, pattern: Pattern) -> int:
        """One compare cycle: tag rows whose cells equal the key on every listed column."""
        tag = self.all_rows
        cells = self._cells
        for c, b in pattern:
            tag &= cells[c] if b else ~cells[c]
        self.tag = tag
        self._pattern = tuple(pattern)
        self.compares += 1
        self.compare_cells += self.rows * len(pattern)
        if self.trace is not None:
            self._emit("compare", "col", self.key, self.mask, tag)
        return tag

    def write(self, pattern: Pattern, tag: int | None = None):
        """One write cycle into the tagged rows (the last compare's tag by default).

        Every row is driven regardless of how many are tagged, so an empty tag
        still costs the cycle.
        """
        if tag is None:
            tag = self.tag
        cells = self._cells
        for c, b in pattern:
            if b:
                cells[c] |= tag
            else:
                cells[c] &= ~tag
        self.writes += 1
        self.write_cells += self.rows * len(pattern)
        if self.trace is not None:
            self._emit("write", "col", sum(1 << c for c, b in pattern if b),
                       sum(1 << c for c, _ in pattern), tag)

    def compare(self, key: int, mask: int) -> int:
        return self.match(_register_pattern(key, mask))

    def masked_write(self, bits: int, mask: int, tag: int | None = None):
        self.write(_register_pattern(bits, mask), tag)

    # -- row dimension -----------------------------------------------------
    def compare_rows(self, key2: int, mask2: int) -> int:
        """Tag columns whose cells equal ``key2`` on every unmasked row."""
        tag2 = 0
        k = key2 & mask2
        for c, col in enumerate(self._cells):
            if col & mask2 == k:
                tag2 |= 1 << c
        self.key2, self.mask2, self.tag2 = key2, mask2, tag2
        self.compares += 1
        self.compare_cells += self.cols * bin(mask2).count("1")
        if self.trace is not None:
            self._emit("compare", "row", key2, mask2, tag2)
        return tag2

    def write_rows(self, bits: int, mask2: int, tag2: int | None = None):
        """Write ``bits`` into the unmasked rows of every tagged column."""
        if tag2 is None:
            tag2 = self.tag2
        val = bits & mask2
        cells = self._cells
        t = tag2
        while t:
            low = t & -t
            c = low.bit_length() - 1
            cells[c] = (cells[c] & ~mask2) | val
            t ^= low
        self.writes += 1
        self.write_cells += bin(tag2).count("1") * bin(mask2).count("1")
        if self.trace is not None:
            self._emit("write", "row", bits, mask2, tag2)

    def charge_row_passes(self, passes: int, active_rows: int, width: int, mask2: int = 0):
        """Account ``passes`` row-dimension compare/write pairs over a word window."""
        for _ in range(passes):
            self.compares += 1
            self.compare_cells += active_rows * width
            if self.trace is not None:
                self._emit("compare", "row", 0, mask2, 0)
            self.writes += 1
            self.write_cells += active_rows * width
            if self.trace is not None:
                self._emit("write", "row", 0, mask2, 0)

    # -- host data path ------------------------------------------------------
    def load_column(self, fld: ColumnField, words) -> None:
        """Write one word per row, bit-serially (one write cycle per bit)."""
        words = [int(w) for w in np.asarray(words).ravel()]
        if len(words) != self.rows:
            raise InvalidArgument(f"need {self.rows} words, got {len(words)}")
        self._check_field(fld)
        for w in words:
            if not fld.fits(w):
                raise PrecisionOverflowError("load_column", w, fld.width)
        mask = (1 << fld.width) - 1
        enc = np.array([w & mask for w in words], dtype=object)
        for i in range(fld.width):
            bits = np.array([(w >> i) & 1 for w in enc], dtype=np.uint8)
            self._cells[fld.col(i)] = _bits_to_int(bits)
            self.writes += 1
            self.write_cells += self.rows
            if self.trace is not None:
                self._emit("write", "col", 0, 1 << fld.col(i), self.all_rows)

    def column_bits(self, c: int) -> np.ndarray:
        raw = self._cells[c].to_bytes(self._nbytes, "little")
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[: self.rows]

    def read_column(self, fld: ColumnField) -> np.ndarray:
        """Host read of a field; costs no AP cycles."""
        self._check_field(fld)
        if fld.width > 62:
            vals = np.zeros(self.rows, dtype=object)
            for i in range(fld.width):
                vals = vals + self.column_bits(fld.col(i)).astype(object) * (1 << i)
        else:
            vals = np.zeros(self.rows, dtype=np.int64)
            for i in range(fld.width):
                vals |= self.column_bits(fld.col(i)).astype(np.int64) << i
        if fld.signed:
            vals = np.where(vals >= (1 << (fld.width - 1)), vals - (1 << fld.width), vals)
        return vals

    def store_values(self, fld: ColumnField, values) -> None:
        """Set a field from per-row values without charging cycles (used by macros)."""
        vals = np.asarray(values)
        for i in range(fld.width):
            bits = ((vals >> i) & 1).astype(np.uint8)
            self._cells[fld.col(i)] = _bits_to_int(bits)

    def _check_field(self, fld: ColumnField):
        if fld.end > self.cols:
            raise LayoutConflictError(f"field {fld} exceeds {self.cols} columns")

    # -- inspection ------------------------------------------------------------
    def cell(self, r: int, c: int) -> int:
        return (self._cells[c] >> r) & 1

    def to_matrix(self) -> np.ndarray:
        return np.stack([self.column_bits(c) for c in range(self.cols)], axis=1).astype(bool)

    def set_matrix(self, m) -> None:
        m = np.asarray(m, dtype=bool)
        if m.shape != (self.rows, self.cols):
            raise InvalidArgument(f"expected shape {(self.rows, self.cols)}, got {m.shape}")
        self._cells = [_bits_to_int(m[:, c]) for c in range(self.cols)]


def _register_pattern(key: int, mask: int) -> list[tuple[int, int]]:
    out = []
    m = mask
    while m:
        low = m & -m
        c = low.bit_length() - 1
        out.append((c, (key >> c) & 1))
        m ^= low
    return out


def new_ap(rows: int, cols: int, zero_col: int | None = None,
           carry_col: int | None = None) -> ApState:
    return ApState(rows, cols, zero_col, carry_col)


class JsonlTrace:
    """Collects per-cycle records; ``dump`` writes them as JSON lines."""

    def __init__(self):
        self.records: list[dict] = []

    def __call__(self, rec: dict):
        self.records.append(rec)

    def dump(self, fp):
        for rec in self.records:
            fp.write(json.dumps(rec) + "\n")
