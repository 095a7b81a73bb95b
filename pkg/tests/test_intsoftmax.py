import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apsoft.errors import (
    DegenerateDistributionError,
    InvalidArgument,
    PrecisionOverflowError,
    PrecisionWarning,
)
from apsoft.intsoftmax import (
    barrett_mod,
    error_metrics,
    float_softmax,
    int_softmax,
    normalize,
    poly_exp,
    shifted_exp,
    stabilize,
    truncated_sum,
)
from apsoft.quant import (
    DEFAULT_T_C,
    QuantizedVector,
    all_presets,
    dequantize_output,
    derive_constants,
    make_scheme,
    preset,
    quantize,
)

import oracle

CFG = preset(8, 0, 16)
SCH = make_scheme(8, -7)
K = derive_constants(SCH, CFG)


def test_worked_example_trace():
    out, tr = int_softmax(QuantizedVector(np.array([0, -50]), SCH), CFG)
    assert tr.q.tolist() == [0, 4]
    assert tr.v_corr.tolist() == [0, -2]
    assert tr.poly.tolist() == [891, 799]
    assert tr.v_approx.tolist() == [891, 49]
    assert int(tr.sum) == 940
    assert out.tolist() == [127221271, 6996456]
    np.testing.assert_allclose(dequantize_output(out, 27), [0.94787, 0.05213], atol=1e-5)


def test_stabilize():
    assert stabilize(np.array([-3, -1, -2])).tolist() == [-2, 0, -1]
    with pytest.raises(InvalidArgument):
        stabilize(np.array([], dtype=np.int64))


@given(st.integers(0, 127))
def test_barrett_is_floor_division(mag):
    q, r = barrett_mod(-mag, K, 8)
    assert (q, -r) == divmod(mag, K.v_ln2)


@pytest.mark.parametrize("M", [4, 6, 8])
def test_barrett_exhaustive(M):
    k = derive_constants(make_scheme(M, DEFAULT_T_C[M]))
    mags = np.arange(2 ** (M - 1))
    q, r = barrett_mod(-mags, k, M)
    assert (q == mags // k.v_ln2).all() and (-r == mags % k.v_ln2).all()


def test_barrett_rejects_positive():
    with pytest.raises(InvalidArgument):
        barrett_mod(3, K, 8)


def test_poly_and_shift():
    assert poly_exp(0, K, CFG) == 24 * 24 + 315
    assert shifted_exp(891, 30, CFG) == 0   # shift clamped to the poly width
    with pytest.raises(InvalidArgument):
        poly_exp(-12, K, CFG)


def test_sum_saturates():
    cfg = preset(4, 0, 8)
    assert truncated_sum(np.full(10_000, 1000), cfg) == (1 << cfg.w_sum) - 1


def test_normalize():
    assert normalize(np.array([5]), 1, 3).tolist() == [40]
    assert normalize(np.array([7, 7]), 7, 10).tolist() == [1024, 1024]
    with pytest.raises(DegenerateDistributionError):
        normalize(np.array([0, 0]), 0, 10)


def _cfg_widths(cfg):
    return cfg.w_poly, cfg.w_vapprox, cfg.w_sum, cfg.D


@given(st.sampled_from(all_presets()), st.data())
def test_matches_oracle(cfg, data):
    T_C = DEFAULT_T_C[cfg.M]
    sch = make_scheme(cfg.M, T_C)
    v = data.draw(st.lists(st.integers(-sch.qmax, 0), min_size=1, max_size=40))
    out, tr = int_softmax(QuantizedVector(np.array(v), sch), cfg)
    want = oracle.softmax_ints(v, cfg.M, T_C, *_cfg_widths(cfg))
    assert tr.q.tolist() == want["q"]
    assert tr.v_corr.tolist() == want["v_corr"]
    assert tr.v_approx.tolist() == want["v_approx"]
    assert int(tr.sum) == want["sum"]
    assert out.tolist() == want["out"]


@given(st.lists(st.integers(-127, 0), min_size=1, max_size=64))
def test_output_sums_to_at_most_one(v):
    out, _ = int_softmax(QuantizedVector(np.array(v), SCH), CFG)
    n = len(v)
    total = int(out.sum())
    assert (1 << CFG.D) - n <= total <= (1 << CFG.D)


@given(st.lists(st.integers(-127, 0), min_size=2, max_size=32), st.randoms())
def test_permutation_equivariant(v, rnd):
    perm = list(range(len(v)))
    rnd.shuffle(perm)
    a, _ = int_softmax(QuantizedVector(np.array(v), SCH), CFG)
    b, _ = int_softmax(QuantizedVector(np.array(v)[perm], SCH), CFG)
    assert (a[perm] == b).all()


@given(st.lists(st.integers(-127, 0), min_size=2, max_size=32))
def test_monotone(v):
    out, _ = int_softmax(QuantizedVector(np.array(v), SCH), CFG)
    order = np.argsort(v, kind="stable")
    assert (np.diff(out[order]) >= 0).all()


def test_batched_rows_equal_single():
    rng = np.random.default_rng(3)
    x = rng.integers(-127, 1, (5, 16))
    batch, _ = int_softmax(QuantizedVector(x, SCH), CFG)
    for i in range(5):
        one, _ = int_softmax(QuantizedVector(x[i], SCH), CFG)
        assert (batch[i] == one).all()


def test_constant_vector_is_uniform():
    out, _ = int_softmax(QuantizedVector(np.full(128, -9), SCH), CFG)
    assert len(set(out.tolist())) == 1
    assert out[0] == (1 << CFG.D) // 128


def test_strict_and_permissive_saturation():
    # a fine scale makes v_b and v_c large enough to overflow the poly width
    sch = make_scheme(4, -0.2)
    cfg = preset(4, 0, 16)
    k = derive_constants(sch)
    v = QuantizedVector(np.array([0, -1, -7]), sch)
    with pytest.raises(PrecisionOverflowError):
        int_softmax(v, cfg, k, strict=True)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        _, tr = int_softmax(v, cfg, k)
    assert tr.saturations and any(issubclass(x.category, PrecisionWarning) for x in w)


def test_float_softmax_and_metrics():
    p = float_softmax([0.0, 0.0])
    assert p.tolist() == [0.5, 0.5]
    m = error_metrics([0.6, 0.4], [0.5, 0.5])
    assert m["max_abs"] == pytest.approx(0.1) and m["argmax_match"]
    with pytest.raises(InvalidArgument):
        error_metrics([1.0], [0.5, 0.5])
    with pytest.raises(InvalidArgument):
        float_softmax([])


def test_dequantized_close_to_float():
    rng = np.random.default_rng(0)
    x = rng.uniform(-7, 0, 128)
    out, _ = int_softmax(quantize(x, SCH), CFG)
    assert np.abs(dequantize_output(out, CFG.D) - float_softmax(x)).max() < 2e-3
