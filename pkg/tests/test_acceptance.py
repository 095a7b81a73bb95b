"""Acceptance criteria, one test per criterion (criterion 7 split by clause).

Each test records a PASS/FAIL line that the terminal summary prints at the
end of the run.
"""

import io
import tempfile
import time
from importlib import resources

import numpy as np
import pytest

from apsoft import cli
from apsoft import kernels as K
from apsoft.ap import ColumnField, new_ap
from apsoft.cost_model import (
    CALIBRATION_TARGET_PJ,
    DEFAULT_MODELS,
    ApCostParams,
    Workload,
    aggregate,
    calibrate_energy,
    calibration_op_energy_pJ,
    cycles_add,
    cycles_mul,
    cycles_reduce,
    instance_cost,
    instance_energy,
)
from apsoft.intsoftmax import float_softmax, int_softmax
from apsoft.pipeline import run_softmax_instance, verify_against_ref
from apsoft.quant import (
    DEFAULT_T_C,
    QuantizedVector,
    all_presets,
    dequantize_output,
    make_scheme,
    preset,
    quantize,
)
from apsoft.sweeps import RunConfig, accuracy_sweep, compare_rows, cost_sweep, illustrative_baseline

RESULTS: list[str] = []

# max_abs of the first oracle run of criterion 4 (seed 20240); enforced with zero slack
PINNED_MAX_ABS = 0.0064840810137089255


def record(label, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    return ok


def test_criterion_1_xor_demo():
    t = time.perf_counter()
    result, compares, writes = cli.demo_xor(out=io.StringIO())
    dt = time.perf_counter() - t
    ok = result == [0b10, 0b01, 0b00, 0b01] and dt < 1.0
    assert record("criterion 1 (XOR demo)", ok,
                  f"result={[format(x, '#04b') for x in result]} compares={compares} writes={writes} "
                  f"time={dt:.3f}s")


class _Bench:
    def __init__(self, rows, cols=700):
        self.ap = new_ap(rows, cols, zero_col=0, carry_col=1)
        self.top = 2

    def field(self, width, values=None):
        f = ColumnField(self.top, width)
        self.top += width
        if values is not None:
            self.ap.store_values(f, np.array([int(v) for v in values], dtype=object))
        return f

    def read(self, f):
        return [int(x) for x in self.ap.read_column(f)]


def _kernel_suite(a, b, w):
    """All kernels on one operand set; returns the names that disagree with the oracle."""
    n = len(a)
    bad = []
    mask = (1 << w) - 1

    bench = _Bench(n)
    A, B = bench.field(w, a), bench.field(w, b)
    R = bench.field(w)
    K.k_add(bench.ap, A, B, R)
    if bench.read(R) != [(x + y) & mask for x, y in zip(a, b)]:
        bad.append("add")
    K.k_sub(bench.ap, A, B, R)
    if bench.read(R) != [(x - y) & mask for x, y in zip(a, b)]:
        bad.append("sub")
    K.k_xor(bench.ap, A, B, bench.field(w))
    P = bench.field(2 * w)
    K.k_mul(bench.ap, A, B, P)
    if bench.read(P) != [x * y for x, y in zip(a, b)]:
        bad.append("mul")
    K.k_square(bench.ap, A, P)
    if bench.read(P) != [x * x for x in a]:
        bad.append("square")

    q = [y % w for y in b]
    X, Q = bench.field(w, a), bench.field(max(1, (w - 1).bit_length()), q)
    K.k_shr_var(bench.ap, X, Q)
    if bench.read(X) != [x >> s for x, s in zip(a, q)]:
        bad.append("shr_var")
    S = bench.field(w, a)
    K.k_saturate(bench.ap, S, w - 2)
    if bench.read(S.view(0, w - 2)) != [min(x, (1 << (w - 2)) - 1) for x in a]:
        bad.append("saturate")

    rows = n // 2
    red = _Bench(rows)
    RA, RB = red.field(w, a[:rows]), red.field(w, b[:rows])
    total, _ = K.k_reduce_sum(red.ap, RA, RB, red.field(w + 20))
    if total != sum(a[:rows]) + sum(b[:rows]):
        bad.append("reduce")

    D = 2 * w + 11
    for s in (1, 3, max(1, sum(a) % (1 << (w + 8))), sum(a[:rows]) or 1):
        F = bench.field(K.div_factor_width(D, w))
        Pd = bench.field(F.width + w)
        view, _ = K.k_div_scalar(bench.ap, A, s, D, Pd, F)
        got = bench.read(view)
        want = [(x << D) // s for x in a]
        if any(abs(g - t) > 1 for g, t in zip(got, want)):
            bad.append(f"div/{s}")
        bench.top -= F.width + Pd.width
    return bad


def test_criterion_2_kernel_oracles():
    t = time.perf_counter()
    bad = []
    pairs = [(x, y) for x in range(16) for y in range(16)]
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    bad += [f"M4:{k}" for k in _kernel_suite(a, b, 4)]
    rng = np.random.default_rng(2)
    for w in (6, 8):
        a = rng.integers(0, 1 << w, 100_000).tolist()
        b = rng.integers(0, 1 << w, 100_000).tolist()
        bad += [f"M{w}:{k}" for k in _kernel_suite(a, b, w)]
    dt = time.perf_counter() - t
    ok = not bad and dt < 60
    assert record("criterion 2 (kernel oracles)", ok,
                  f"mismatches={bad or 'none'} cases=256 exhaustive + 2x100000 time={dt:.1f}s")


def test_criterion_3_pipeline_oracle():
    t = time.perf_counter()
    plan = ((8, 64), (16, 64), (128, 64), (4096, 8))   # 200 vectors per preset
    failures, count = [], 0
    for cfg in all_presets():
        sch = make_scheme(cfg.M, DEFAULT_T_C[cfg.M])
        rng = np.random.default_rng([cfg.M, cfg.vcorr_extra, cfg.N])
        for L, n in plan:
            for _ in range(n):
                v = QuantizedVector(rng.integers(-sch.qmax, 1, L), sch)
                rep = verify_against_ref(v, cfg)
                count += 1
                if not rep.ok:
                    failures.append(f"{cfg.key}/{L}: {rep.detail}")
    dt = time.perf_counter() - t
    ok = not failures and dt < 300
    assert record("criterion 3 (pipeline oracle)", ok,
                  f"{count} vectors, {len(failures)} divergent, 13 snapshots each, time={dt:.0f}s"
                  + (f" first={failures[0]}" if failures else ""))


def test_criterion_4_numerical_fidelity():
    cfg, sch = preset(8, 0, 16), make_scheme(8, -7.0)
    rng = np.random.default_rng(20240)
    x = rng.uniform(-7.0, 0.0, (1000, 128))
    out, _ = int_softmax(quantize(x, sch), cfg)
    p = dequantize_output(out, cfg.D)
    e = float_softmax(x)
    sum_err = float(np.abs(p.sum(axis=1) - 1).max())
    sum_ok = sum_err <= 128 * 2.0 ** -27
    top2 = np.sort(x, axis=1)[:, -2:]
    wide = (top2[:, 1] - top2[:, 0]) > 2 * sch.S
    rate = float(np.mean(np.argmax(p, 1)[wide] == np.argmax(e, 1)[wide]))
    max_abs = float(np.abs(p - e).max())
    ok = sum_ok and rate >= 0.99 and max_abs <= PINNED_MAX_ABS
    assert record("criterion 4 (numerical fidelity)", ok,
                  f"sum_err={sum_err:.3g} (bound {128 * 2.0 ** -27:.3g}) "
                  f"argmax_rate={rate:.4f} over {int(wide.sum())} rows "
                  f"max_abs={max_abs!r} (pinned {PINNED_MAX_ABS!r})")


def test_criterion_5_cycle_formulas():
    formulas = (cycles_add(8), cycles_mul(8), cycles_mul(4), cycles_reduce(14, 4096))
    f_ok = formulas == (89, 544, 144, 229)
    mismatches = []
    rng = np.random.default_rng(5)
    for cfg in all_presets():
        sch = make_scheme(cfg.M, DEFAULT_T_C[cfg.M])
        for L in (8, 32, 128, 1024, 4096):
            res = run_softmax_instance(QuantizedVector(rng.integers(-sch.qmax, 1, L), sch), cfg)
            if res.cycles != instance_cost(cfg, L).cycles:
                mismatches.append((cfg.key, L))
    ok = f_ok and not mismatches
    assert record("criterion 5 (cycle formulas)", ok,
                  f"add8/mul8/mul4/reduce={formulas}; analytic vs simulated mismatches="
                  f"{mismatches or 'none'} over 36 presets x 5 lengths")


def test_criterion_6_area():
    p = ApCostParams()
    got = {k: aggregate(m, Workload(1, 128), preset(8, 0, 16), p).area_mm2
           for k, m in DEFAULT_MODELS.items()}
    want = {"llama2-7b": 0.64, "llama2-13b": 0.81, "llama2-70b": 1.28}
    ok = all(abs(got[k] - want[k]) <= 0.01 + 1e-12 for k in want)
    assert record("criterion 6 (area)", ok,
                  ", ".join(f"{k}={got[k]:.2f} (published {want[k]})" for k in want))


@pytest.fixture(scope="module")
def trend_grid():
    t = time.perf_counter()
    rows = accuracy_sweep(RunConfig(seqlens=[4096], samples=100, seed=0))
    return {r["preset"]: r["mean_abs"] for r in rows}, time.perf_counter() - t


def test_criterion_7a_small_sum_width_hurts(trend_grid):
    g, dt = trend_grid
    pairs = [(g[f"M{M}-vc+{e}-N8"], g[f"M{M}-vc+{e}-N16"]) for M in (4, 6, 8) for e in (0, 1, 2)]
    ok = all(a > b for a, b in pairs)
    worst = min(a - b for a, b in pairs)
    assert record("criterion 7a (mean_abs N=8 > N=16)", ok,
                  f"min difference over M,vcorr = {worst:.3g}; grid time={dt:.1f}s")


def test_criterion_7b_sum_width_saturates(trend_grid):
    g, _ = trend_grid
    diffs = [abs(g[f"M{M}-vc+{e}-N16"] - g[f"M{M}-vc+{e}-N20"]) for M in (4, 6, 8) for e in (0, 1, 2)]
    ok = max(diffs) < 1e-6
    assert record("criterion 7b (|N16 - N20| < 1e-6)", ok, f"max diff={max(diffs):.3g}")


def test_criterion_7c_m4_too_small(trend_grid):
    g, _ = trend_grid
    ratios = [g[f"M4-vc+{e}-N{N}"] / g[f"M8-vc+{e}-N{N}"] for e in (0, 1, 2) for N in (8, 12, 16, 20)]
    ok = min(ratios) >= 5
    assert record("criterion 7c (M4 >= 5x M8)", ok, f"min ratio={min(ratios):.2f}")


def test_criterion_7d_vcorr_irrelevant(trend_grid):
    g, dt = trend_grid
    spread = max(
        max(g[f"M{M}-vc+{e}-N{N}"] for e in (0, 1, 2)) - min(g[f"M{M}-vc+{e}-N{N}"] for e in (0, 1, 2))
        for M in (4, 6, 8) for N in (8, 12, 16, 20)
    )
    ok = spread < 1e-6 and dt < 600
    assert record("criterion 7d (vcorr spread < 1e-6)", ok, f"max spread={spread:.3g}")


def test_criterion_8_calibration():
    p = calibrate_energy(ApCostParams())
    op = calibration_op_energy_pJ(p)
    cfg = preset(8, 0, 16)
    p10 = calibrate_energy(ApCostParams(), 10 * CALIBRATION_TARGET_PJ)
    lin = instance_energy(cfg, 4096, p10) / instance_energy(cfg, 4096, p)
    ok = op == 5.88e-3 and abs(lin - 10) < 1e-9
    assert record("criterion 8 (calibration)", ok, f"calibration op={op!r} pJ, x10 target -> x{lin:.12g}")


def test_criterion_9_compare_fixtures():
    rc = RunConfig()
    cost = cost_sweep(rc)
    ident = compare_rows(cost, [dict(r, device="AP") for r in cost])
    ident_ok = all(r["energy_ratio"] == r["latency_ratio"] == r["edp_ratio"] == 1.0 for r in ident)
    synth = compare_rows(cost, [dict(r, device="S", energy_J=10 * r["energy_J"],
                                     latency_s=0.1 * r["latency_s"]) for r in cost])
    synth_ok = all(abs(r["energy_ratio"] - 10) < 1e-9 and abs(r["latency_ratio"] - 0.1) < 1e-12
                   and abs(r["edp_ratio"] - 1) < 1e-9 for r in synth)
    fixture = resources.files("apsoft.data").joinpath("baseline_illustrative.csv")
    base = cli.read_csv(str(fixture), cli.BASELINE_COLUMNS)
    rows = compare_rows(cli.read_csv(_cost_csv(cost), ["model"]), base)
    peak = {}
    for r in rows:
        peak[(r["device"], r["model"])] = max(peak.get((r["device"], r["model"]), 0), r["edp_ratio"])
    want = {("A100", "llama2-7b"): 1068, ("A100", "llama2-13b"): 1191, ("A100", "llama2-70b"): 2091,
            ("RTX3090", "llama2-7b"): 4421, ("RTX3090", "llama2-13b"): 5524,
            ("RTX3090", "llama2-70b"): 8851}
    fix_ok = all(abs(peak[k] / v - 1) < 1e-6 for k, v in want.items())
    regen = illustrative_baseline(cost)
    ok = ident_ok and synth_ok and fix_ok and len(regen) == len(base)
    assert record("criterion 9 (compare fixtures)", ok,
                  f"identity={ident_ok} synthetic={synth_ok} "
                  f"fixture peaks={ {f'{d}/{m}': round(v, 3) for (d, m), v in peak.items()} }")


def _cost_csv(cost):
    fd = tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False)
    fd.write(cli.csv_text(cost, cli.COST_COLUMNS, {"tool": "acceptance"}))
    fd.close()
    return fd.name


def test_criterion_10_performance():
    from apsoft.cost_model import instance_cost as ic
    ic.cache_clear()
    t = time.perf_counter()
    rows = cost_sweep(RunConfig())
    t_cost = time.perf_counter() - t
    cfg, sch = preset(8, 0, 16), make_scheme(8, -7.0)
    v = QuantizedVector(np.random.default_rng(10).integers(-127, 1, 4096), sch)
    t = time.perf_counter()
    run_softmax_instance(v, cfg)
    t_sim = time.perf_counter() - t
    ok = len(rows) == 108 and t_cost < 1 and t_sim < 5
    assert record("criterion 10 (performance)", ok,
                  f"cost sweep {len(rows)} rows in {t_cost:.3f}s; seqlen-4096 simulation {t_sim:.3f}s")
