"""Golden integer-only softmax.

Every step works on Python ints or numpy arrays along the last axis, so the
same code serves single vectors, batches for the accuracy sweep, and as the
oracle the AP simulator is checked against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDistributionError,
    InvalidArgument,
    PrecisionOverflowError,
    PrecisionWarning,
)
from .quant import DerivedConstants, PrecisionConfig, QuantizedVector, derive_constants


@dataclass
class SoftmaxTraceScalar:
    v: np.ndarray
    v_stable: np.ndarray
    barrett_prod: np.ndarray
    q_est: np.ndarray
    qd: np.ndarray
    q: np.ndarray
    v_corr: np.ndarray
    base: np.ndarray
    square: np.ndarray
    poly: np.ndarray
    v_approx: np.ndarray
    sum: np.ndarray | int
    out_int: np.ndarray
    D: int
    saturations: dict = field(default_factory=dict)


def _int_array(v, wide=False):
    arr = np.asarray(v)
    if wide:
        return arr.astype(object)
    return arr.astype(np.int64)


def stabilize(v) -> np.ndarray:
    """Subtract the maximum so the largest entry becomes 0."""
    vals = v.values if isinstance(v, QuantizedVector) else np.asarray(v, dtype=np.int64)
    if vals.size == 0 or vals.shape[-1] == 0:
        raise InvalidArgument("empty vector")
    return vals - vals.max(axis=-1, keepdims=True)


def _barrett_estimate(mag, consts: DerivedConstants, M: int):
    return (mag * consts.mu) >> (2 * M)


def barrett_mod(v_stable, consts: DerivedConstants, M: int):
    """Quotient and remainder of a non-positive value by v_ln2 without division.

    Returns ``(q, v_corr)`` with ``v_stable == v_corr - q * v_ln2`` and
    ``-v_ln2 < v_corr <= 0``. Accepts scalars or arrays.
    """
    vs = np.asarray(v_stable, dtype=np.int64)
    if np.any(vs > 0):
        raise InvalidArgument("barrett_mod expects non-positive inputs")
    mag = -vs
    q = _barrett_estimate(mag, consts, M)
    v_corr = q * consts.v_ln2 - mag
    # the estimate undershoots by at most a few units; one pass is enough for
    # the widths used here, the loop only guards exotic schemes
    while True:
        low = v_corr <= -consts.v_ln2
        if not np.any(low):
            break
        q = q + low
        v_corr = v_corr + low * consts.v_ln2
    if q.ndim == 0:
        return int(q), int(v_corr)
    return q, v_corr


def _saturate(x, width, name, strict, sats):
    top = (1 << width) - 1
    over = x > top
    if np.any(over):
        if strict:
            raise PrecisionOverflowError(name, int(np.max(x)), width)
        sats[name] = sats.get(name, 0) + int(np.count_nonzero(over))
        x = np.where(over, top, x)
    return x


def poly_exp(v_corr, consts: DerivedConstants, cfg: PrecisionConfig, strict=False):
    """(v_corr + v_b)**2 + v_c, saturated to the poly width."""
    vc = np.asarray(v_corr, dtype=np.int64)
    if np.any(vc > 0) or np.any(vc <= -consts.v_ln2):
        raise InvalidArgument("v_corr outside (-v_ln2, 0]")
    base = vc + consts.v_b
    out = _saturate(base * base + consts.v_c, cfg.w_poly, "poly", strict, {})
    return int(out) if np.ndim(out) == 0 else out


def shifted_exp(poly, q, cfg: PrecisionConfig, strict=False):
    """poly >> q with the shift clamped to the poly width, saturated to v_approx."""
    p = np.asarray(poly, dtype=np.int64)
    qq = np.minimum(np.asarray(q, dtype=np.int64), cfg.w_poly)
    out = _saturate(p >> qq, cfg.w_vapprox, "v_approx", strict, {})
    return int(out) if np.ndim(out) == 0 else out


def truncated_sum(v_approx, cfg: PrecisionConfig):
    """Sum saturated (not wrapped) to the sum width."""
    va = np.asarray(v_approx)
    if np.any(va < 0):
        raise InvalidArgument("v_approx must be non-negative")
    total = va.astype(object).sum(axis=-1) if va.dtype == object else va.sum(axis=-1)
    top = (1 << cfg.w_sum) - 1
    out = np.minimum(total, top)
    return int(out) if np.ndim(out) == 0 else out


def normalize(v_approx, total, D: int):
    """floor(v_approx * 2**D / total) in exact integer arithmetic."""
    tot = np.asarray(total)
    if np.any(tot < 1):
        raise DegenerateDistributionError("sum of approximated exponentials is zero")
    va = np.asarray(v_approx)
    wide = va.dtype == object or int(np.max(va)).bit_length() + D > 62
    va = _int_array(va, wide)
    tot = _int_array(tot, wide)
    if tot.ndim < va.ndim:
        tot = tot[..., None]
    return (va << D) // tot


def int_softmax(v: QuantizedVector, cfg: PrecisionConfig, consts: DerivedConstants | None = None,
                D: int | None = None, strict: bool = False):
    """Run the full integer softmax; returns ``(out_int, trace)``."""
    if consts is None:
        consts = derive_constants(v.scheme, cfg, strict=strict)
    if D is None:
        D = cfg.D
    M = cfg.M
    sats: dict = {}

    vals = v.values if isinstance(v, QuantizedVector) else np.asarray(v, dtype=np.int64)
    v_stable = stabilize(vals)
    mag = -v_stable
    prod = mag * consts.mu
    q_est = prod >> (2 * M)
    qd = q_est * consts.v_ln2
    q, v_corr = barrett_mod(v_stable, consts, M)
    q = np.asarray(q)
    v_corr = np.asarray(v_corr)
    lim = 1 << (cfg.w_vcorr - 1)
    if np.any(v_corr < -lim):
        if strict:
            raise PrecisionOverflowError("v_corr", int(v_corr.min()), cfg.w_vcorr)
        sats["v_corr"] = int(np.count_nonzero(v_corr < -lim))
    base = v_corr + consts.v_b
    square = base * base
    poly = _saturate(square + consts.v_c, cfg.w_poly, "poly", strict, sats)
    shift = np.minimum(q, cfg.w_poly)
    v_approx = _saturate(poly >> shift, cfg.w_vapprox, "v_approx", strict, sats)
    total = truncated_sum(v_approx, cfg)
    if np.any(np.asarray(total) >= (1 << cfg.w_sum) - 1):
        sats["sum"] = int(np.count_nonzero(np.asarray(total) >= (1 << cfg.w_sum) - 1))
    out = normalize(v_approx, total, D)
    if sats and not strict:
        for name in ("v_corr", "poly", "v_approx"):
            if name in sats:
                warnings.warn(f"{name} saturated in {sats[name]} element(s)", PrecisionWarning,
                              stacklevel=2)
    trace = SoftmaxTraceScalar(
        v=vals, v_stable=v_stable, barrett_prod=prod, q_est=q_est, qd=qd, q=q, v_corr=v_corr,
        base=base, square=square, poly=poly, v_approx=v_approx, sum=total, out_int=out, D=D,
        saturations=sats,
    )
    return out, trace


def float_softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise InvalidArgument("empty input")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("input contains NaN or infinity")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def error_metrics(approx, exact) -> dict:
    a = np.asarray(approx, dtype=np.float64)
    e = np.asarray(exact, dtype=np.float64)
    if a.shape != e.shape:
        raise InvalidArgument(f"length mismatch: {a.shape} vs {e.shape}")
    diff = np.abs(a - e)
    return {
        "max_abs": float(diff.max()),
        "mean_abs": float(diff.mean()),
        "argmax_match": bool(np.argmax(a) == np.argmax(e)),
    }
