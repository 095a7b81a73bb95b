"""Bit-serial arithmetic kernels on top of :mod:`apsoft.ap`.

Each kernel returns a :class:`KernelReport` measured from the AP counters.
The closed-form cycle counts every kernel is built to hit live in
:mod:`apsoft.cost_model`; tests compare the two.

Operands narrower than the kernel width are extended on the fly: signed
fields repeat their sign column, unsigned fields read the AP's zero column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ap import ApState, ColumnField, Counters
from .errors import (
    DegenerateDistributionError,
    InvalidArgument,
    LayoutConflictError,
    PrecisionOverflowError,
)


@dataclass(frozen=True)
class KernelReport:
    compares: int = 0
    writes: int = 0
    compare_cells: int = 0
    write_cells: int = 0
    extension: bool = False  # cost contract defined here, not by the published formulas

    @property
    def cycles(self) -> int:
        return self.compares + self.writes

    @classmethod
    def between(cls, before: Counters, after: Counters, extension=False) -> "KernelReport":
        d = after - before
        return cls(d.compares, d.writes, d.compare_cells, d.write_cells, extension)

    def __add__(self, other: "KernelReport") -> "KernelReport":
        return KernelReport(self.compares + other.compares, self.writes + other.writes,
                            self.compare_cells + other.compare_cells,
                            self.write_cells + other.write_cells,
                            self.extension or other.extension)


def _zero(ap: ApState) -> int:
    if ap.zero_col is None:
        raise LayoutConflictError("kernel needs a reserved zero column")
    return ap.zero_col


def _carry(ap: ApState, carry: int | None) -> int:
    c = ap.carry_col if carry is None else carry
    if c is None:
        raise LayoutConflictError("kernel needs a carry column")
    return c


def operand_col(ap: ApState, fld: ColumnField, i: int) -> int:
    """Column holding bit ``i`` of ``fld`` after sign/zero extension."""
    if i < fld.width:
        return fld.col(i)
    if fld.signed:
        return fld.col(fld.width - 1)
    return _zero(ap)


def _no_overlap(result: ColumnField, *operands: ColumnField):
    for op in operands:
        if result.overlaps(op):
            raise LayoutConflictError(f"result {result} overlaps operand {op}")


# -- LUT engine ------------------------------------------------------------

@dataclass(frozen=True)
class Lut:
    """Compare/write passes over named slots, applied at every bit position.

    Slots are operand names plus ``"r"`` (result bit) and ``"c"`` (carry).
    ``setup`` is written once to all rows before the first bit, ``per_bit``
    is written to all rows at the start of each bit position.
    """

    passes: tuple
    setup: tuple = ()
    per_bit: tuple = ()
    in_place_safe: bool = False


XOR_LUT = Lut(passes=(
    ((("a", 1), ("b", 0)), (("r", 1),)),
    ((("a", 0), ("b", 1)), (("r", 1),)),
))

# out-of-place full adder; the carry column is updated in place
ADD_LUT = Lut(
    passes=(
        ((("a", 0), ("b", 0), ("c", 1)), (("r", 1), ("c", 0))),
        ((("a", 0), ("b", 1), ("c", 0)), (("r", 1),)),
        ((("a", 1), ("b", 0), ("c", 0)), (("r", 1),)),
        ((("a", 1), ("b", 1), ("c", 1)), (("r", 1),)),
        ((("a", 1), ("b", 1), ("c", 0)), (("c", 1),)),
    ),
    setup=(("c", 0),),
    per_bit=(("r", 0),),
)

# a - b == a + ~b + 1
SUB_LUT = Lut(
    passes=tuple(
        (tuple((s, 1 - b) if s == "b" else (s, b) for s, b in m), w) for m, w in ADD_LUT.passes
    ),
    setup=(("c", 1),),
    per_bit=(("r", 0),),
)

# in-place accumulate r += a (with carry), as (c, a, r) -> writes
ACC_PASSES = (
    ((1, 0, 0), (("r", 1), ("c", 0))),
    ((1, 0, 1), (("r", 0),)),
    ((0, 1, 1), (("r", 0), ("c", 1))),
    ((0, 1, 0), (("r", 1),)),
)


def run_lut_bitserial(ap: ApState, lut: Lut, operands: dict, result: ColumnField,
                      carry: int | None = None, width: int | None = None) -> KernelReport:
    """Apply ``lut`` LSB to MSB over ``width`` bits, all rows in parallel."""
    width = result.width if width is None else width
    if width > result.width:
        raise LayoutConflictError(f"result field narrower than {width} bits")
    if not lut.in_place_safe:
        _no_overlap(result, *operands.values())
    uses_carry = any(s == "c" for m, w in lut.passes for s, _ in m + w) or lut.setup
    c = _carry(ap, carry) if uses_carry else None
    before = ap.snapshot_counters()
    every = ap.all_rows

    def resolve(slots, i):
        out = []
        for s, b in slots:
            if s == "r":
                out.append((result.col(i), b))
            elif s == "c":
                out.append((c, b))
            else:
                out.append((operand_col(ap, operands[s], i), b))
        return out

    if lut.setup:
        ap.write(resolve(lut.setup, 0), every)
    for i in range(width):
        if lut.per_bit:
            ap.write(resolve(lut.per_bit, i), every)
        for m, w in lut.passes:
            ap.match(resolve(m, i))
            ap.write(resolve(w, i))
    return KernelReport.between(before, ap.snapshot_counters())


# -- kernels -----------------------------------------------------------------

def k_xor(ap, A, B, R, width=None) -> KernelReport:
    """R = A ^ B. R must start cleared (the LUT only sets ones)."""
    return run_lut_bitserial(ap, XOR_LUT, {"a": A, "b": B}, R, width=width)


def k_add(ap, A, B, R, width=None, carry=None) -> KernelReport:
    """R = A + B modulo 2**width; 11*width + 1 cycles."""
    return run_lut_bitserial(ap, ADD_LUT, {"a": A, "b": B}, R, carry, width)


def k_sub(ap, A, B, R, width=None, carry=None) -> KernelReport:
    """R = A - B modulo 2**width; same pass structure as addition."""
    return run_lut_bitserial(ap, SUB_LUT, {"a": A, "b": B}, R, carry, width)


def k_mul(ap, A, B, R, wa=None, wb=None, carry=None) -> KernelReport:
    """Unsigned shift-and-add product R = A * B.

    Iterates over the ``wb`` bits of B; for each set bit, A is accumulated
    into R with four in-place passes per bit, then the carry lands in the next
    free bit. Costs ``8*wa*wb + wa + 3*wb`` cycles, i.e. ``8M^2 + 4M`` when
    both widths equal M.
    """
    wa = A.width if wa is None else wa
    wb = B.width if wb is None else wb
    if R.width < wa + wb:
        raise LayoutConflictError(f"product field needs {wa + wb} bits, has {R.width}")
    _no_overlap(R, A, B)
    c = _carry(ap, carry)
    z = _zero(ap)
    before = ap.snapshot_counters()
    every = ap.all_rows
    for k in range(wa + wb):
        ap.write([(R.col(k), 0), (c, 0)] if k == 0 else [(R.col(k), 0)], every)
    for j in range(wb):
        bj = operand_col(ap, B, j)
        for i in range(wa):
            ai = operand_col(ap, A, i)
            rk = R.col(i + j)
            for (cv, av, rv), w in ACC_PASSES:
                if ai == bj:
                    # squaring: the multiplier bit and the multiplicand bit share a column
                    a_term = (z, 1) if av == 0 else (z, 0)
                else:
                    a_term = (ai, av)
                ap.match([(bj, 1), (c, cv), a_term, (rk, rv)])
                ap.write([(rk if s == "r" else c, b) for s, b in w])
        ap.match([(c, 1)])
        ap.write([(R.col(j + wa), 1), (c, 0)])
    return KernelReport.between(before, ap.snapshot_counters())


def k_square(ap, A, R, w=None, carry=None) -> KernelReport:
    return k_mul(ap, A, A, R, w, w, carry)


def k_broadcast(ap, c: int, R: ColumnField) -> KernelReport:
    """Write constant ``c`` into every row, one bit position per cycle."""
    if not R.fits(c):
        raise PrecisionOverflowError("broadcast", c, R.width)
    enc = c & ((1 << R.width) - 1)
    before = ap.snapshot_counters()
    for i in range(R.width):
        ap.write([(R.col(i), (enc >> i) & 1)], ap.all_rows)
    return KernelReport.between(before, ap.snapshot_counters())


def k_mul_const(ap, A, c: int, R, C, wa=None, carry=None) -> KernelReport:
    """Broadcast ``c`` into scratch field ``C`` then multiply, iterating over A."""
    rep = k_broadcast(ap, c, C)
    return rep + k_mul(ap, C, A, R, C.width, wa, carry)


def k_shr_const(ap, A: ColumnField, s: int):
    """Constant right shift by re-addressing; no cycles are spent."""
    if s < 0:
        raise InvalidArgument("shift must be non-negative")
    if s >= A.width:
        return ColumnField(_zero(ap), 1), KernelReport()
    return A.view(s, signed=A.signed), KernelReport()


def k_shr_var(ap, X: ColumnField, Q: ColumnField, q_bits=None) -> KernelReport:
    """In-place per-row shift X >>= Q, as a logarithmic shifter.

    Round k moves every bit down by 2**k in rows whose Q bit k is set, using
    two compare/write pairs per bit (one fixes 1->0, the other 0->1).
    Ascending bit order keeps each source bit intact until it has been read.
    """
    q_bits = Q.width if q_bits is None else q_bits
    z = _zero(ap)
    w = X.width
    before = ap.snapshot_counters()
    for k in range(q_bits):
        s = 1 << k
        qk = operand_col(ap, Q, k)
        for i in range(w):
            xi = X.col(i)
            src = X.col(i + s) if i + s < w else z
            ap.match([(qk, 1), (xi, 1), (src, 0)])
            ap.write([(xi, 0)])
            ap.match([(qk, 1), (xi, 0), (src, 1)])
            ap.write([(xi, 1)])
    return KernelReport.between(before, ap.snapshot_counters(), extension=True)


def k_saturate(ap, X: ColumnField, width: int) -> KernelReport:
    """Clamp X to ``width`` bits: any set bit above forces the low bits to all ones."""
    before = ap.snapshot_counters()
    low = [(X.col(i), 1) for i in range(width)]
    for h in range(width, X.width):
        ap.match([(X.col(h), 1)])
        ap.write(low)
    return KernelReport.between(before, ap.snapshot_counters(), extension=True)


def k_barrett_fix(ap, VC: ColumnField, Q: ColumnField, v_ln2: int, carry=None) -> KernelReport:
    """Single Barrett correction step.

    Rows whose remainder equals ``-v_ln2`` get remainder 0 and ``q += 1``.
    The quotient estimate only undershoots on exact multiples as long as
    ``v_ln2 < 2**(M+1)``, so an equality search on one key is sufficient.
    """
    if not VC.signed or not VC.fits(-v_ln2):
        raise PrecisionOverflowError("v_corr", -v_ln2, VC.width)
    c = _carry(ap, carry)
    before = ap.snapshot_counters()
    ap.write([(c, 0)], ap.all_rows)
    key = (-v_ln2) & ((1 << VC.width) - 1)
    ap.match([(VC.col(i), (key >> i) & 1) for i in range(VC.width)])
    ap.write([(VC.col(i), 0) for i in range(VC.width)] + [(c, 1)])
    for i in range(Q.width):
        qi = Q.col(i)
        ap.match([(c, 1), (qi, 0)])
        ap.write([(qi, 1), (c, 0)])
        ap.match([(c, 1), (qi, 1)])
        ap.write([(qi, 0)])
    return KernelReport.between(before, ap.snapshot_counters(), extension=True)


def reduce_stages(rows: int) -> list[tuple[int, int]]:
    """(stride, pair count) for each level of the row-pair tree."""
    out = []
    s = 1
    while s < rows:
        pairs = (rows - s - 1) // (2 * s) + 1
        out.append((s, pairs))
        s *= 2
    return out


def k_reduce_sum(ap, A: ColumnField, B: ColumnField, ACC: ColumnField, w=None):
    """Sum of all words, two per row (A and B), saturated to the ACC width.

    The in-row pair is added bit-serially with ACC's bit ``w`` serving as the
    carry, which leaves the carry-out exactly where the sum needs it. The
    row tree then folds row ``r + stride`` into row ``r`` using the second
    register set: each level is four row-dimension compare/write pairs over
    the selected rows. Returns ``(sum, report)``.
    """
    w = max(A.width, B.width) if w is None else w
    if ACC.width < w + 1:
        raise LayoutConflictError(f"accumulator needs at least {w + 1} bits")
    _no_overlap(ACC, A, B)
    before = ap.snapshot_counters()
    ap.write([(ACC.col(k), 0) for k in range(ACC.width)], ap.all_rows)
    for i in range(w):
        ap.match([(operand_col(ap, A, i), 1)])
        ap.write([(ACC.col(i), 1)])
    c = ACC.col(w)
    for i in range(w):
        bi = operand_col(ap, B, i)
        ri = ACC.col(i)
        for (cv, bv, rv), wr in ACC_PASSES:
            ap.match([(c, cv), (bi, bv), (ri, rv)])
            ap.write([(ri if s == "r" else c, b) for s, b in wr])

    top = (1 << ACC.width) - 1
    vals = ap.read_column(ACC)
    for stride, pairs in reduce_stages(ap.rows):
        step = 2 * stride
        lo = vals[0:pairs * step:step]
        hi = vals[stride:stride + pairs * step:step]
        vals[0:pairs * step:step] = np.minimum(lo + hi, top)
        mask2 = 0
        for p in range(pairs):
            mask2 |= (1 << (p * step)) | (1 << (p * step + stride))
        ap.store_values(ACC, vals)
        ap.charge_row_passes(4, 2 * pairs, ACC.width, mask2)
    total = int(ap.read_column(ACC)[0])
    return total, KernelReport.between(before, ap.snapshot_counters())


def reciprocal(s: int, D: int, w_a: int) -> tuple[int, int]:
    """Host-side ``(factor, guard)`` with floor(a * factor >> guard) == floor(a * 2**D / s).

    Exact for every ``a < 2**w_a`` because ``2**guard > a * s``.
    """
    if s < 1:
        raise DegenerateDistributionError("cannot normalize by a zero sum")
    g = w_a + s.bit_length()
    f = -((-(1 << (D + g))) // s)
    return f, g


def div_factor_width(D: int, w_a: int) -> int:
    return D + w_a + 2


def k_div_scalar(ap, A: ColumnField, s: int, D: int, P: ColumnField, F: ColumnField,
                 carry=None):
    """Per-row floor(A * 2**D / s) through a host reciprocal and one product.

    The reciprocal goes to ``F`` (broadcast), the product to ``P``; the
    quotient is the view of P above the guard bits. Returns ``(view, report)``.
    """
    f, g = reciprocal(s, D, A.width)
    rep = k_mul_const(ap, A, f, P, F, A.width, carry)
    view_w = P.width - g
    if view_w < 1:
        return ColumnField(_zero(ap), 1), rep
    return P.view(g, view_w), KernelReport(rep.compares, rep.writes, rep.compare_cells,
                                           rep.write_cells, extension=True)
