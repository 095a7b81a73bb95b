"""Quantization scheme, precision presets and the offline integer constants.

The scale convention is the signed M-bit one: the clipping threshold maps
onto -(2**(M-1) - 1), so ``S = -T_C / (2**(M-1) - 1)``.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    DegenerateScaleError,
    InvalidArgument,
    PrecisionOverflowError,
    PrecisionWarning,
    UnknownPresetError,
)

# second-order polynomial coefficients for e^r on (-ln 2, 0]
POLY_A = Fraction("0.3585")
POLY_B = Fraction("1.353")
POLY_C = Fraction("0.344")

LN2 = Fraction(math.log(2))

DEFAULT_T_C = {4: -4.0, 6: -7.0, 8: -7.0}


@dataclass(frozen=True)
class QuantScheme:
    M: int
    T_C: float

    def __post_init__(self):
        if not isinstance(self.M, (int, np.integer)) or self.M < 3:
            raise InvalidArgument(f"M must be an integer >= 3, got {self.M!r}")
        if not math.isfinite(self.T_C) or self.T_C >= 0:
            raise InvalidArgument(f"clipping threshold must be negative, got {self.T_C!r}")

    @property
    def qmax(self) -> int:
        """Largest quantized magnitude, 2**(M-1) - 1."""
        return 2 ** (self.M - 1) - 1

    @property
    def S_exact(self) -> Fraction:
        return -Fraction(self.T_C) / self.qmax

    @property
    def S(self) -> float:
        return float(self.S_exact)


def make_scheme(M: int, T_C: float) -> QuantScheme:
    return QuantScheme(int(M), float(T_C))


# Literal cells of the precision table, indexed by vcorr_extra then M.
_TABLE_POLY = {0: {4: 11, 6: 15, 8: 19}, 1: {4: 13, 6: 17, 8: 21}, 2: {4: 15, 6: 19, 8: 23}}
_TABLE_VAPPROX = {0: {4: 10, 6: 12, 8: 14}, 1: {4: 12, 6: 14, 8: 16}, 2: {4: 14, 6: 16, 8: 18}}
_TABLE_SUM = {
    8: {0: {4: 18, 6: 20, 8: 22}, 1: {4: 20, 6: 22, 8: 24}, 2: {4: 22, 6: 24, 8: 26}},
    12: {0: {4: 22, 6: 24, 8: 26}, 1: {4: 24, 6: 26, 8: 28}, 2: {4: 26, 6: 28, 8: 30}},
    16: {0: {4: 26, 6: 28, 8: 30}, 1: {4: 28, 6: 30, 8: 32}, 2: {4: 30, 6: 32, 8: 34}},
    20: {0: {4: 30, 6: 32, 8: 34}, 1: {4: 32, 6: 34, 8: 36}, 2: {4: 34, 6: 36, 8: 38}},
}

PRESET_M = (4, 6, 8)
PRESET_VCORR = (0, 1, 2)
PRESET_N = (8, 12, 16, 20)


@dataclass(frozen=True)
class PrecisionConfig:
    """Bit widths of every intermediate of the integer softmax."""

    M: int
    vcorr_extra: int
    N: int
    w_v: int
    w_vstable: int
    w_vln2: int
    w_vb: int
    w_vc: int
    w_poly: int
    w_vapprox: int
    w_sum: int
    w_out: int

    @property
    def w_vcorr(self) -> int:
        return self.M + self.vcorr_extra

    @property
    def D(self) -> int:
        """Default fractional bits of the normalized output (probability 1 fills w_out)."""
        return self.w_out - 1

    @property
    def key(self) -> str:
        return preset_key(self.M, self.vcorr_extra, self.N)

    def widths(self) -> dict:
        return {
            "v": self.w_v,
            "v_stable": self.w_vstable,
            "v_ln2": self.w_vln2,
            "v_b": self.w_vb,
            "v_c": self.w_vc,
            "v_corr": self.w_vcorr,
            "poly": self.w_poly,
            "v_approx": self.w_vapprox,
            "sum": self.w_sum,
            "out": self.w_out,
        }


def make_config(M: int, vcorr_extra: int = 0, N: int = 16) -> PrecisionConfig:
    """Config for any M, following the width pattern of the published presets."""
    if M < 3:
        raise InvalidArgument(f"M must be >= 3, got {M}")
    if vcorr_extra not in (0, 1, 2):
        raise InvalidArgument(f"vcorr_extra must be 0, 1 or 2, got {vcorr_extra}")
    if N < 1:
        raise InvalidArgument(f"N must be >= 1, got {N}")
    w_vapprox = M + 6 + 2 * vcorr_extra
    return PrecisionConfig(
        M=M, vcorr_extra=vcorr_extra, N=N,
        w_v=M, w_vstable=M, w_vln2=4, w_vb=M, w_vc=2 * M,
        w_poly=2 * M + 3 + 2 * vcorr_extra,
        w_vapprox=w_vapprox,
        w_sum=w_vapprox + N,
        w_out=2 * M + 12,
    )


def preset(M: int, vcorr_extra: int, N: int) -> PrecisionConfig:
    """One cell of the published precision grid."""
    if M not in PRESET_M or vcorr_extra not in PRESET_VCORR or N not in PRESET_N:
        raise UnknownPresetError(f"no preset for M={M}, vcorr_extra={vcorr_extra}, N={N}")
    return PrecisionConfig(
        M=M, vcorr_extra=vcorr_extra, N=N,
        w_v=M, w_vstable=M, w_vln2=4, w_vb=M, w_vc=2 * M,
        w_poly=_TABLE_POLY[vcorr_extra][M],
        w_vapprox=_TABLE_VAPPROX[vcorr_extra][M],
        w_sum=_TABLE_SUM[N][vcorr_extra][M],
        w_out=2 * M + 12,
    )


def preset_key(M: int, vcorr_extra: int, N: int) -> str:
    return f"M{M}-vc+{vcorr_extra}-N{N}"


_KEY_RE = re.compile(r"^M(\d+)-vc\+([0-2])-N(\d+)$")


def parse_preset_key(key: str) -> PrecisionConfig:
    m = _KEY_RE.match(key.strip())
    if not m:
        raise UnknownPresetError(f"malformed preset key {key!r}")
    return preset(int(m.group(1)), int(m.group(2)), int(m.group(3)))


def all_presets() -> list[PrecisionConfig]:
    return [preset(M, e, N) for e in PRESET_VCORR for M in PRESET_M for N in PRESET_N]


@dataclass(frozen=True)
class DerivedConstants:
    v_ln2: int
    mu: int
    v_b: int
    v_c: int
    M: int
    S_sm_real: float
    S_sm: int
    a: float = float(POLY_A)
    b: float = float(POLY_B)
    c: float = float(POLY_C)
    warnings: tuple = field(default=(), compare=False)


def _fits_unsigned(value: int, width: int) -> bool:
    return 0 <= value < (1 << width)


def derive_constants(scheme: QuantScheme, cfg: PrecisionConfig | None = None,
                     strict: bool = False) -> DerivedConstants:
    """Offline integer constants for a scheme.

    With ``cfg`` given, each constant is checked against its declared width:
    ``strict`` raises PrecisionOverflowError, otherwise a PrecisionWarning is
    emitted and recorded on the result.
    """
    S = scheme.S_exact
    M = scheme.M
    v_ln2 = math.floor(LN2 / S)
    if v_ln2 < 1:
        raise DegenerateScaleError(f"ln(2)/S floors to {v_ln2} for S={float(S)}")
    mu = (1 << (2 * M)) // v_ln2
    v_b = math.floor(POLY_B / S)
    v_c = math.floor(POLY_C / (POLY_A * S * S))
    s_sm_real = POLY_A * S * S

    notes = []
    if cfg is not None:
        if cfg.M != M:
            raise InvalidArgument(f"scheme M={M} does not match config M={cfg.M}")
        for name, value, width in (("v_ln2", v_ln2, cfg.w_vln2),
                                   ("v_b", v_b, cfg.w_vb),
                                   ("v_c", v_c, cfg.w_vc)):
            if not _fits_unsigned(value, width):
                if strict:
                    raise PrecisionOverflowError(name, value, width)
                msg = f"{name}={value} needs {value.bit_length()} bits, declared {width}; widened"
                warnings.warn(msg, PrecisionWarning, stacklevel=2)
                notes.append(msg)
    return DerivedConstants(
        v_ln2=v_ln2, mu=mu, v_b=v_b, v_c=v_c, M=M,
        S_sm_real=float(s_sm_real), S_sm=math.floor(s_sm_real),
        warnings=tuple(notes),
    )


@dataclass(frozen=True, eq=False)
class QuantizedVector:
    values: np.ndarray
    scheme: QuantScheme

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64)
        if vals.size == 0:
            raise InvalidArgument("empty quantized vector")
        lo = -self.scheme.qmax
        if vals.max() > 0 or vals.min() < lo:
            raise InvalidArgument(f"quantized values must lie in [{lo}, 0]")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[-1]


def quantize(x, scheme: QuantScheme) -> QuantizedVector:
    """Stabilize, clip to [T_C, 0] and round (half away from zero).

    Works along the last axis, so a 2-D array quantizes each row independently.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise InvalidArgument("empty input")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("input contains NaN or infinity")
    shifted = x - x.max(axis=-1, keepdims=True)
    clipped = np.clip(shifted, scheme.T_C, 0.0)
    y = clipped / scheme.S
    q = -np.floor(-y + 0.5)
    q = np.clip(q, -scheme.qmax, 0).astype(np.int64)
    return QuantizedVector(q, scheme)


def dequantize_output(out_int, D: int) -> np.ndarray:
    if D < 1:
        raise InvalidArgument(f"D must be >= 1, got {D}")
    arr = np.asarray(out_int)
    if arr.dtype == object:
        return np.array([float(Fraction(int(v), 1 << D)) for v in arr.ravel()]).reshape(arr.shape)
    return arr.astype(np.float64) / float(1 << D)
