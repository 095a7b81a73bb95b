"""Analytic cycle, energy, latency and area model.

Every kernel cost here is a closed form written independently of the
simulator; tests assert exact equality with the counters the simulator
measures on the same schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

from .errors import InvalidArgument
from .quant import PrecisionConfig
from .schedule import Call, canonical_steps

CALIBRATION_TARGET_PJ = 5.88e-3
CALIBRATION_OP = "per-word 6-bit addition, all rows active"


def _pos_int(name, x):
    if not isinstance(x, int) or isinstance(x, bool) or x < 1:
        raise InvalidArgument(f"{name} must be a positive integer, got {x!r}")


def clog2(n: int) -> int:
    """Ceiling log2 for n >= 1."""
    _pos_int("log argument", n)
    return (n - 1).bit_length()


# -- published per-function formulas ------------------------------------------

def cycles_add(M: int) -> int:
    _pos_int("M", M)
    return 2 * M + 8 * M + M + 1


def cycles_mul(M: int) -> int:
    _pos_int("M", M)
    return 2 * M + 8 * M * M + 2 * M


def cycles_reduce(M: int, L: int) -> int:
    _pos_int("M", M)
    _pos_int("L", L)
    if L < 2 or L % 2:
        raise InvalidArgument(f"reduction length must be even and >= 2, got {L}")
    return 2 * M + 8 * M + 8 * clog2(L // 2) + 1


def cycles_matmul(M: int, i: int, j: int, u: int) -> int:
    for name, x in (("M", M), ("i", i), ("j", j), ("u", u)):
        _pos_int(name, x)
    lg = clog2(j)
    return 2 * M + 8 * M * M + 8 * lg + 2 * M + lg


# -- per-call closed forms ------------------------------------------------------

@dataclass(frozen=True)
class CallCost:
    compares: int
    writes: int
    compare_cells: int
    write_cells: int
    extension: bool = False

    @property
    def cycles(self) -> int:
        return self.compares + self.writes


def _tree_pairs(rows: int) -> list[int]:
    out, s = [], 1
    while s < rows:
        out.append(-(-(rows - s) // (2 * s)))
        s *= 2
    return out


def call_cost(call: Call, rows: int) -> CallCost:
    """Counters one kernel call produces on ``rows`` active rows."""
    k, w = call.kind, call.widths
    if k in ("load", "broadcast"):
        return CallCost(0, w["w"], 0, rows * w["w"])
    if k in ("add", "sub"):
        n = w["w"]
        return CallCost(5 * n, 6 * n + 1, rows * 15 * n, rows * (7 * n + 1))
    if k in ("mul", "square"):
        wa, wb = (w["w"], w["w"]) if k == "square" else (w["wa"], w["wb"])
        c = wb * (4 * wa + 1)
        return CallCost(c, wa + wb + c, rows * wb * (16 * wa + 1),
                        rows * (wa + wb + 1 + wb * (6 * wa + 2)))
    if k == "shr_const":
        return CallCost(0, 0, 0, 0)
    if k == "shr_var":
        n = 2 * w["w"] * w["wq"]
        return CallCost(n, n, rows * 3 * n, rows * n, True)
    if k == "saturate":
        n = w["w"] - w["to"]
        return CallCost(n, n, rows * n, rows * n * w["to"], True)
    if k == "barrett_fix":
        W, wq = w["w"], w["wq"]
        return CallCost(1 + 2 * wq, 2 + 2 * wq, rows * (W + 4 * wq), rows * (W + 2 + 3 * wq), True)
    if k == "reduce":
        n, acc = w["w"], w["acc"]
        pairs = _tree_pairs(rows)
        tree = sum(8 * p * acc for p in pairs)
        return CallCost(5 * n + 4 * len(pairs), 1 + 5 * n + 4 * len(pairs),
                        rows * 13 * n + tree, rows * (acc + 7 * n) + tree)
    raise InvalidArgument(f"unknown kernel kind {k}")


def published_call_cycles(call: Call, seqlen: int) -> int:
    """Cycles when only the published formulas are used; extensions count as multiplications."""
    k, w = call.kind, call.widths
    if k in ("load", "broadcast"):
        return w["w"]
    if k in ("add", "sub"):
        return cycles_add(w["w"])
    if k == "mul":
        return cycles_mul(max(w["wa"], w["wb"]))
    if k in ("square", "shr_var", "saturate", "barrett_fix"):
        return cycles_mul(w["w"])
    if k == "shr_const":
        return 0
    if k == "reduce":
        return cycles_reduce(w["w"], seqlen)
    raise InvalidArgument(f"unknown kernel kind {k}")


@dataclass(frozen=True)
class StepCost:
    index: int
    name: str
    cycles: int
    compare_cells: int
    write_cells: int
    extension: bool


@dataclass(frozen=True)
class InstanceCost:
    cycles: int
    compare_cells: int
    write_cells: int
    steps: tuple
    paper_formulas_only: bool = False

    @property
    def extension_cycles(self) -> int:
        return sum(s.cycles for s in self.steps if s.extension)


def _check_seqlen(seqlen: int):
    _pos_int("seqlen", seqlen)
    if seqlen < 2 or seqlen % 2:
        raise InvalidArgument(f"sequence length must be even and >= 2, got {seqlen}")


@lru_cache(maxsize=4096)
def instance_cost(cfg: PrecisionConfig, seqlen: int, D: int | None = None,
                  paper_formulas_only: bool = False) -> InstanceCost:
    """Per-step cycles and active cells of one softmax instance (seqlen/2 rows)."""
    _check_seqlen(seqlen)
    rows = seqlen // 2
    steps = []
    for spec in canonical_steps(cfg, D):
        costs = [call_cost(c, rows) for c in spec.calls]
        if paper_formulas_only:
            cyc = sum(published_call_cycles(c, seqlen) for c in spec.calls)
        else:
            cyc = sum(c.cycles for c in costs)
        steps.append(StepCost(spec.index, spec.name, cyc,
                              sum(c.compare_cells for c in costs),
                              sum(c.write_cells for c in costs),
                              any(c.extension for c in costs)))
    return InstanceCost(sum(s.cycles for s in steps), sum(s.compare_cells for s in steps),
                        sum(s.write_cells for s in steps), tuple(steps), paper_formulas_only)


def instance_cycles(cfg: PrecisionConfig, seqlen: int, D: int | None = None,
                    paper_formulas_only: bool = False) -> int:
    return instance_cost(cfg, seqlen, D, paper_formulas_only).cycles


# -- energy -----------------------------------------------------------------------

@dataclass(frozen=True)
class ApCostParams:
    clock_MHz: float = 1000.0
    energy_per_compare_bit: float = 1.0  # pJ per active cell per cycle
    energy_per_write_bit: float = 1.0
    energy_scale: float = 1.0
    area_per_ap_mm2: float = 0.02
    calibrated: bool = False
    calibration: str = ""

    def __post_init__(self):
        for name in ("clock_MHz", "energy_per_compare_bit", "energy_per_write_bit",
                     "energy_scale", "area_per_ap_mm2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidArgument(f"{name} must be positive, got {v!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ApCostParams":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidArgument(f"unknown cost parameters: {sorted(extra)}")
        return cls(**d)


def cells_energy_pJ(compare_cells: int, write_cells: int, params: ApCostParams) -> float:
    return (compare_cells * params.energy_per_compare_bit
            + write_cells * params.energy_per_write_bit) * params.energy_scale


def instance_energy(cfg: PrecisionConfig, seqlen: int, params: ApCostParams,
                    D: int | None = None) -> float:
    """Energy of one softmax instance in joules."""
    c = instance_cost(cfg, seqlen, D)
    return cells_energy_pJ(c.compare_cells, c.write_cells, params) * 1e-12


def calibration_op_energy_pJ(params: ApCostParams) -> float:
    """Energy of the calibration op: one word's share of a 6-bit addition."""
    add = call_cost(Call("add", None, {}, {"w": 6}), 1)
    return cells_energy_pJ(add.compare_cells, add.write_cells, params)


def calibrate_energy(params: ApCostParams, target_pJ: float = CALIBRATION_TARGET_PJ) -> ApCostParams:
    if not (target_pJ > 0 and math.isfinite(target_pJ)):
        raise InvalidArgument(f"calibration target must be positive, got {target_pJ}")
    unscaled = calibration_op_energy_pJ(replace(params, energy_scale=1.0))
    return replace(params, energy_scale=target_pJ / unscaled, calibrated=True,
                   calibration=f"{CALIBRATION_OP} = {target_pJ!r} pJ")


# -- aggregation ------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: int
    heads: int

    def __post_init__(self):
        _pos_int("layers", self.layers)
        _pos_int("heads", self.heads)


def load_models(path=None) -> dict[str, ModelSpec]:
    if path is None:
        text = resources.files("apsoft.data").joinpath("models.json").read_text()
    else:
        with open(path) as fp:
            text = fp.read()
    raw = json.loads(text)
    return {k: ModelSpec(k, int(v["layers"]), int(v["heads"]))
            for k, v in raw.items() if not k.startswith("_")}


DEFAULT_MODELS = load_models()


@dataclass(frozen=True)
class Workload:
    batch: int
    seqlen: int
    max_seqlen: int = 1 << 16

    def __post_init__(self):
        _pos_int("batch", self.batch)
        _check_seqlen(self.seqlen)
        if self.seqlen > self.max_seqlen:
            raise InvalidArgument(f"seqlen {self.seqlen} exceeds configured max {self.max_seqlen}")


@dataclass(frozen=True)
class CostReport:
    instance_cycles: int
    total_latency_s: float
    total_energy_J: float
    edp: float
    area_mm2: float
    model: str = ""
    preset: str = ""
    seqlen: int = 0
    batch: int = 0
    calibrated: bool = False
    extension_cycles: int = 0
    meta: dict = field(default_factory=dict, compare=False)


def aggregate(model: ModelSpec, wl: Workload, cfg: PrecisionConfig, params: ApCostParams,
              D: int | None = None, paper_formulas_only: bool = False) -> CostReport:
    """Whole-model softmax cost: every attention row of every layer and batch item is one
    instance; heads run on their own APs in parallel."""
    cost = instance_cost(cfg, wl.seqlen, D, paper_formulas_only)
    instances = model.layers * wl.batch * wl.seqlen
    latency = instances * cost.cycles / (params.clock_MHz * 1e6)
    energy = instances * model.heads * instance_energy(cfg, wl.seqlen, params, D)
    return CostReport(
        instance_cycles=cost.cycles, total_latency_s=latency, total_energy_J=energy,
        edp=energy * latency, area_mm2=model.heads * params.area_per_ap_mm2,
        model=model.name, preset=cfg.key, seqlen=wl.seqlen, batch=wl.batch,
        calibrated=params.calibrated, extension_cycles=cost.extension_cycles,
    )


def edp_ratio(ap: CostReport, baseline) -> dict:
    """Baseline over AP ratios; values above 1 favor the AP."""
    if isinstance(baseline, dict):
        e, t = baseline.get("energy_J"), baseline.get("latency_s")
    else:
        e, t = baseline.total_energy_J, baseline.total_latency_s
    if e is None or t is None or not (e > 0 and t > 0):
        raise InvalidArgument("baseline energy and latency must be positive")
    er = e / ap.total_energy_J
    lr = t / ap.total_latency_s
    return {"energy_ratio": er, "latency_ratio": lr, "edp_ratio": er * lr}
