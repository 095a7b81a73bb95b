"""Integer softmax executed on the AP simulator, step by step.

Two vector elements share each row (lanes 0 and 1), so a length-L vector
needs L/2 rows. Constants are broadcast once and shared by both lanes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .ap import ApState, new_ap
from .errors import InvalidArgument
from .intsoftmax import int_softmax
from .quant import DerivedConstants, PrecisionConfig, QuantizedVector, derive_constants
from .schedule import DEFAULT_MAX_COLS, LayoutPlan, canonical_steps, plan_layout

# which intermediate each step exposes, named after the reference trace fields
SNAPSHOT_FIELDS = {
    1: ("v",), 2: ("v_stable",), 3: ("barrett_prod",), 4: ("q_est",), 5: ("qd",),
    6: ("v_corr", "q"), 7: ("base",), 8: ("square",), 9: ("poly",), 10: ("v_approx",),
    11: ("sum",), 12: ("factor",), 13: ("out_int",),
}


def digest(values) -> str:
    data = json.dumps([int(x) for x in np.asarray(values).ravel()])
    return hashlib.sha256(data.encode()).hexdigest()[:16]


@dataclass
class StepRecord:
    index: int
    name: str
    kernels: tuple
    cycles: int
    compares: int
    writes: int
    compare_cells: int
    write_cells: int
    extension: bool
    snapshot: dict
    digests: dict


@dataclass
class InstanceResult:
    out_int: np.ndarray
    steps: list
    totals: K.KernelReport
    layout: LayoutPlan
    D: int
    sum: int
    guard: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return self.totals.cycles

    def step(self, index: int) -> StepRecord:
        return self.steps[index - 1]


def _values(v) -> np.ndarray:
    vals = v.values if isinstance(v, QuantizedVector) else np.asarray(v, dtype=np.int64)
    if vals.ndim != 1:
        raise InvalidArgument("the simulator runs one vector per instance")
    return vals


class _Runner:
    def __init__(self, ap: ApState, plan: LayoutPlan, consts: DerivedConstants, vals: np.ndarray):
        self.ap, self.plan, self.vals = ap, plan, vals
        self.host = {"max": int(vals.max()), "mu": consts.mu, "v_ln2": consts.v_ln2,
                     "v_b": consts.v_b, "v_c": consts.v_c}
        self.consts = consts
        self.sum = None
        self.guard = 0

    def f(self, name):
        return self.plan.field(name)

    def call(self, c) -> K.KernelReport:
        ap, f, w = self.ap, self.f, c.widths
        a = c.args
        if c.kind == "load":
            before = ap.snapshot_counters()
            rows = self.plan.rows
            ap.load_column(f(a["dst"]), self.vals[c.lane * rows:(c.lane + 1) * rows])
            return K.KernelReport.between(before, ap.snapshot_counters())
        if c.kind == "broadcast":
            if a["value"] == "factor":
                fac, self.guard = K.reciprocal(self.sum, self.plan.widths.D,
                                               self.plan.widths.vapprox)
                self.host["factor"] = fac
            return K.k_broadcast(ap, self.host[a["value"]], f(a["dst"]))
        if c.kind == "add":
            return K.k_add(ap, f(a["a"]), f(a["b"]), f(a["r"]), w["w"])
        if c.kind == "sub":
            return K.k_sub(ap, f(a["a"]), f(a["b"]), f(a["r"]), w["w"])
        if c.kind == "mul":
            return K.k_mul(ap, f(a["a"]), f(a["b"]), f(a["r"]), w["wa"], w["wb"])
        if c.kind == "square":
            return K.k_square(ap, f(a["a"]).view(0, w["w"]), f(a["r"]), w["w"])
        if c.kind == "shr_const":
            return K.k_shr_const(ap, f(a["src"]), w["s"])[1]
        if c.kind == "barrett_fix":
            return K.k_barrett_fix(ap, f(a["vcorr"]), f(a["q"]), self.consts.v_ln2)
        if c.kind == "shr_var":
            return K.k_shr_var(ap, f(a["x"]), f(a["q"]), w["wq"])
        if c.kind == "saturate":
            return K.k_saturate(ap, f(a["x"]), w["to"])
        if c.kind == "reduce":
            self.sum, rep = K.k_reduce_sum(ap, f(a["a"]), f(a["b"]), f(a["acc"]), w["w"])
            if self.sum < 1:
                raise K.DegenerateDistributionError("sum of approximated exponentials is zero")
            return rep
        raise InvalidArgument(f"unknown kernel kind {c.kind}")

    def both(self, name):
        p = self.plan
        return np.concatenate([self.ap.read_column(p.field(f"{name}{ln}")) for ln in (0, 1)])

    def snapshot(self, index: int) -> dict:
        p = self.plan
        if index == 1:
            return {"v": self.both("v")}
        if index == 2:
            return {"v_stable": -self.both("mag")}
        if index == 3:
            return {"barrett_prod": self.both("prod")}
        if index == 4:
            return {"q_est": self.both("q")}
        if index == 5:
            return {"qd": self.both("qd")}
        if index == 6:
            return {"v_corr": self.both("vcorr"), "q": self.both("q")}
        if index == 7:
            return {"base": self.both("base")}
        if index == 8:
            return {"square": self.both("sq")}
        if index == 9:
            return {"poly": self.both("poly")}
        if index == 10:
            return {"v_approx": self.both("va")}
        if index == 11:
            return {"sum": np.array([self.sum])}
        if index == 12:
            return {"factor": np.array([self.host["factor"]], dtype=object)}
        out = []
        for ln in (0, 1):
            norm = p.field(f"norm{ln}")
            out.append(self.ap.read_column(norm.view(self.guard, norm.width - self.guard)))
        return {"out_int": np.concatenate(out)}


def run_softmax_instance(v, cfg: PrecisionConfig, consts: DerivedConstants | None = None,
                         D: int | None = None, trace=None,
                         max_cols: int = DEFAULT_MAX_COLS) -> InstanceResult:
    """Execute the 13-step schedule for one vector; returns per-step records and totals."""
    vals = _values(v)
    if consts is None:
        if not isinstance(v, QuantizedVector):
            raise InvalidArgument("pass constants or a QuantizedVector")
        consts = derive_constants(v.scheme, cfg)
    plan = plan_layout(cfg, len(vals), D, max_cols)
    ap = new_ap(plan.rows, plan.cols, plan.zero_col, plan.carry_col)
    ap.trace = trace
    run = _Runner(ap, plan, consts, vals)
    records, total = [], K.KernelReport()
    for spec in canonical_steps(cfg, plan.widths.D):
        rep = K.KernelReport()
        for c in spec.calls:
            rep = rep + run.call(c)
        snap = run.snapshot(spec.index)
        records.append(StepRecord(
            spec.index, spec.name, tuple(c.kind for c in spec.calls), rep.cycles, rep.compares,
            rep.writes, rep.compare_cells, rep.write_cells, rep.extension, snap,
            {k: digest(x) for k, x in snap.items()},
        ))
        total = total + rep
    out = records[-1].snapshot["out_int"]
    return InstanceResult(out, records, total, plan, plan.widths.D, run.sum, run.guard)


def reference_snapshots(v, cfg: PrecisionConfig, consts: DerivedConstants, D: int) -> dict:
    """Per-step golden values from the integer reference, keyed like the simulator's."""
    vals = _values(v)
    _, tr = int_softmax(vals, cfg, consts, D)
    fac, _ = K.reciprocal(int(tr.sum), D, cfg.w_vapprox)
    src = {
        "v": tr.v, "v_stable": tr.v_stable, "barrett_prod": tr.barrett_prod, "q_est": tr.q_est,
        "qd": tr.qd, "v_corr": tr.v_corr, "q": tr.q, "base": tr.base, "square": tr.square,
        "poly": tr.poly, "v_approx": tr.v_approx, "sum": np.array([int(tr.sum)]),
        "factor": np.array([fac], dtype=object), "out_int": tr.out_int,
    }
    return {i: {k: src[k] for k in names} for i, names in SNAPSHOT_FIELDS.items()}


@dataclass
class VerifyReport:
    steps: list  # (index, name, ok)
    first_divergence: int | None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.first_divergence is None


def verify_against_ref(v, cfg: PrecisionConfig, consts: DerivedConstants | None = None,
                       D: int | None = None, ap_consts: DerivedConstants | None = None,
                       result: InstanceResult | None = None) -> VerifyReport:
    """Compare every step's intermediates with the integer reference.

    ``ap_consts`` lets the simulator run with different constants than the
    reference, which is how a mutated constant is shown to be caught.
    """
    if consts is None:
        consts = derive_constants(v.scheme, cfg)
    D = cfg.D if D is None else D
    if result is None:
        result = run_softmax_instance(v, cfg, ap_consts or consts, D)
    gold = reference_snapshots(v, cfg, consts, D)
    steps, first, detail = [], None, ""
    for rec in result.steps:
        ok = True
        for k, ref in gold[rec.index].items():
            got = rec.snapshot[k]
            if not np.array_equal(np.asarray(got, dtype=object), np.asarray(ref, dtype=object)):
                ok = False
                if first is None:
                    bad = np.flatnonzero(np.asarray(got, dtype=object) != np.asarray(ref, dtype=object))
                    i = int(bad[0]) if bad.size else 0
                    detail = f"step {rec.index} ({rec.name}) {k}[{i}]: ap={got[i]} ref={ref[i]}"
        steps.append((rec.index, rec.name, ok))
        if not ok and first is None:
            first = rec.index
    return VerifyReport(steps, first, detail)
