"""The 13-step softmax schedule as data, plus column layout planning.

The simulator executes these steps and the cost model prices them, so both
sides agree on which kernel runs at which width by construction; what they
compute independently is the cycle count (counters vs closed forms).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ap import ColumnField
from .errors import InvalidArgument, LayoutConflictError
from .quant import PrecisionConfig

DEFAULT_MAX_COLS = 512
LANES = (0, 1)  # two words per AP row


@dataclass(frozen=True)
class StepWidths:
    M: int
    D: int
    q: int        # Barrett quotient, max(q) <= 2**(M-1) - 1
    mu: int
    mag: int      # |v_stable|
    prod: int     # |v_stable| * mu
    vln2: int
    qd: int       # q * v_ln2
    vcorr: int
    base: int     # v_corr + v_b
    vb: int
    vc: int
    sq: int
    poly: int
    vapprox: int
    sum: int
    factor: int   # reciprocal of the sum
    norm: int     # v_approx * factor
    out: int


def step_widths(cfg: PrecisionConfig, D: int | None = None) -> StepWidths:
    D = cfg.D if D is None else D
    M = cfg.M
    wq = M - 1
    w_mu = 2 * M + 1
    vcorr = max(cfg.w_vcorr, cfg.w_vln2 + 2)
    sq = 2 * cfg.w_vb
    if cfg.w_poly < max(sq, cfg.w_vc) + 1:
        raise LayoutConflictError(f"poly width {cfg.w_poly} cannot hold (v_corr+v_b)^2 + v_c")
    if cfg.w_sum < cfg.w_vapprox + 1:
        raise LayoutConflictError("sum width must exceed v_approx width")
    factor = D + cfg.w_vapprox + 2
    return StepWidths(
        M=M, D=D, q=wq, mu=w_mu, mag=M, prod=w_mu + M, vln2=cfg.w_vln2,
        qd=cfg.w_vln2 + wq, vcorr=vcorr, base=max(vcorr, cfg.w_vb + 1), vb=cfg.w_vb,
        vc=cfg.w_vc, sq=sq, poly=cfg.w_poly, vapprox=cfg.w_vapprox, sum=cfg.w_sum,
        factor=factor, norm=factor + cfg.w_vapprox, out=D + 1,
    )


@dataclass(frozen=True)
class Call:
    """One kernel invocation. ``args`` name regions; ``widths`` fix the cost."""

    kind: str
    lane: int | None
    args: dict
    widths: dict


@dataclass(frozen=True)
class StepSpec:
    index: int
    name: str
    calls: tuple


def _lane(name, lane):
    return f"{name}{lane}"


def canonical_steps(cfg: PrecisionConfig, D: int | None = None) -> list[StepSpec]:
    w = step_widths(cfg, D)
    steps = []

    def per_lane(kind, args, widths):
        return tuple(
            Call(kind, ln, {k: _lane(v, ln) if v in LANE_VALUES else v
                            for k, v in args.items()}, widths)
            for ln in LANES
        )

    def bcast(name, width, value):
        return Call("broadcast", None, {"dst": name, "value": value}, {"w": width})

    steps.append(StepSpec(1, "load_v", per_lane("load", {"dst": "v"}, {"w": w.M})))
    steps.append(StepSpec(2, "stabilize", (bcast("max", w.M, "max"),)
                          + per_lane("sub", {"a": "max", "b": "v", "r": "mag"}, {"w": w.mag})))
    steps.append(StepSpec(3, "barrett_mul", (bcast("mu", w.mu, "mu"),)
                          + per_lane("mul", {"a": "mu", "b": "mag", "r": "prod"},
                                     {"wa": w.mu, "wb": w.mag})))
    steps.append(StepSpec(4, "barrett_shift", per_lane("shr_const", {"src": "prod", "dst": "q"},
                                                        {"s": 2 * w.M})))
    steps.append(StepSpec(5, "mul_vln2", (bcast("vln2", w.vln2, "v_ln2"),)
                          + per_lane("mul", {"a": "vln2", "b": "q", "r": "qd"},
                                     {"wa": w.vln2, "wb": w.q})))
    fix = []
    for ln in LANES:
        fix.append(Call("sub", ln, {"a": _lane("qd", ln), "b": _lane("mag", ln),
                                    "r": _lane("vcorr", ln)}, {"w": w.vcorr}))
        fix.append(Call("barrett_fix", ln, {"vcorr": _lane("vcorr", ln), "q": _lane("q", ln)},
                        {"w": w.vcorr, "wq": w.q}))
    steps.append(StepSpec(6, "remainder", tuple(fix)))
    steps.append(StepSpec(7, "add_vb", (bcast("vb", w.vb, "v_b"),)
                          + per_lane("add", {"a": "vcorr", "b": "vb", "r": "base"}, {"w": w.base})))
    steps.append(StepSpec(8, "square", per_lane("square", {"a": "base", "r": "sq"}, {"w": w.vb})))
    steps.append(StepSpec(9, "add_vc", (bcast("vc", w.vc, "v_c"),)
                          + per_lane("add", {"a": "sq", "b": "vc", "r": "poly"}, {"w": w.poly})))
    shift = []
    for ln in LANES:
        shift.append(Call("shr_var", ln, {"x": _lane("poly", ln), "q": _lane("q", ln)},
                          {"w": w.poly, "wq": w.q}))
        shift.append(Call("saturate", ln, {"x": _lane("poly", ln)},
                          {"w": w.poly, "to": w.vapprox}))
    steps.append(StepSpec(10, "shift_exp", tuple(shift)))
    steps.append(StepSpec(11, "reduce", (Call("reduce", None,
                                              {"a": "va0", "b": "va1", "acc": "acc"},
                                              {"w": w.vapprox, "acc": w.sum}),)))
    steps.append(StepSpec(12, "reciprocal", (bcast("factor", w.factor, "factor"),)))
    steps.append(StepSpec(13, "normalize", per_lane("mul", {"a": "factor", "b": "va", "r": "norm"},
                                                    {"wa": w.factor, "wb": w.vapprox})))
    return steps


LANE_VALUES = {"v", "mag", "prod", "q", "qd", "vcorr", "base", "sq", "poly", "va", "norm"}

EXTENSION_KINDS = {"shr_var", "saturate", "barrett_fix"}


# -- layout ------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    name: str
    width: int
    signed: bool
    first: int
    last: int


def _regions(w: StepWidths) -> list[Region]:
    shared = [
        Region("max", w.M, True, 2, 2),
        Region("mu", w.mu, False, 3, 3),
        Region("vln2", w.vln2, False, 5, 5),
        Region("vb", w.vb, False, 7, 7),
        Region("vc", w.vc, False, 9, 9),
        Region("acc", w.sum, False, 11, 11),
        Region("factor", w.factor, False, 12, 13),
    ]
    lane = [
        ("v", w.M, True, 1, 2),
        ("mag", w.mag, False, 2, 6),
        ("prod", w.prod, False, 3, 10),   # hosts q until the variable shift
        ("qd", w.qd, False, 5, 6),
        ("vcorr", w.vcorr, True, 6, 7),
        ("base", w.base, False, 7, 8),
        ("sq", w.sq, False, 8, 9),
        ("poly", w.poly, False, 9, 13),   # becomes v_approx in place
        ("norm", w.norm, False, 13, 13),
    ]
    out = list(shared)
    for ln in LANES:
        out += [Region(_lane(n, ln), wd, sg, f, l) for n, wd, sg, f, l in lane]
    return out


@dataclass
class LayoutPlan:
    rows: int
    seqlen: int
    cols: int
    zero_col: int
    carry_col: int
    widths: StepWidths
    fields: dict = field(default_factory=dict)
    lifetimes: dict = field(default_factory=dict)

    def live_at(self, step: int) -> list[str]:
        return [n for n, (f, l) in self.lifetimes.items() if f <= step <= l]

    def field(self, name: str) -> ColumnField:
        """Region or derived view: ``q<l>``, ``va<l>`` and the quotient view."""
        if name in self.fields:
            return self.fields[name]
        w = self.widths
        if name[:-1] == "q":
            return self.fields["prod" + name[-1]].view(2 * w.M, w.q)
        if name[:-1] == "va":
            return self.fields["poly" + name[-1]].view(0, w.vapprox)
        raise KeyError(name)

    @property
    def result_width(self) -> int:
        return self.widths.out

    def roles(self, step: int) -> dict:
        """Live values per role at ``step``: A is lane 0, B is lane 1, shared spans both."""
        out = {"A": [], "B": [], "shared": []}
        for name in self.live_at(step):
            role = {"0": "A", "1": "B"}.get(name[-1], "shared")
            out[role].append(name)
        return out


def plan_layout(cfg: PrecisionConfig, seqlen: int, D: int | None = None,
                max_cols: int = DEFAULT_MAX_COLS) -> LayoutPlan:
    """First-fit column allocation; regions share columns only when their lifetimes are disjoint."""
    if seqlen < 2 or seqlen % 2:
        raise InvalidArgument(f"sequence length must be even and >= 2, got {seqlen}")
    w = step_widths(cfg, D)
    zero_col, carry_col = 0, 1
    used: list[tuple[int, int, int, int]] = []  # (start, end, first, last)
    fields, lifetimes = {}, {}
    top = 2
    for reg in sorted(_regions(w), key=lambda r: (r.first, -r.width)):
        start = 2
        while True:
            clash = [u for u in used
                     if u[0] < start + reg.width and start < u[1]
                     and u[2] <= reg.last and reg.first <= u[3]]
            if not clash:
                break
            start = max(u[1] for u in clash)
        end = start + reg.width
        if end > max_cols:
            raise LayoutConflictError(
                f"step {reg.first}: region {reg.name} needs columns up to {end}, budget {max_cols}")
        used.append((start, end, reg.first, reg.last))
        fields[reg.name] = ColumnField(start, reg.width, reg.signed)
        lifetimes[reg.name] = (reg.first, reg.last)
        top = max(top, end)
    return LayoutPlan(rows=seqlen // 2, seqlen=seqlen, cols=top, zero_col=zero_col,
                      carry_col=carry_col, widths=w, fields=fields, lifetimes=lifetimes)
