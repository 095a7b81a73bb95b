"""Command-line entry point: ``apsoft accuracy|cost|compare|simulate|demo-xor``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from importlib import metadata

import numpy as np

from . import kernels as K
from .ap import ColumnField, new_ap
from .errors import ApSoftError, InvalidArgument
from .pipeline import run_softmax_instance, verify_against_ref
from .quant import (
    DEFAULT_T_C,
    dequantize_output,
    derive_constants,
    make_scheme,
    parse_preset_key,
    quantize,
)
from .cost_model import instance_cycles
from .sweeps import DEFAULT_PRESET, RunConfig, accuracy_sweep, compare_rows, cost_sweep

ACCURACY_COLUMNS = ["preset", "seqlen", "samples", "mean_abs", "max_abs", "argmax_rate"]
COST_COLUMNS = ["model", "preset", "seqlen", "batch", "instance_cycles", "latency_s",
                "energy_J", "edp", "area_mm2", "calibrated"]
COMPARE_COLUMNS = ["model", "device", "preset", "seqlen", "batch", "energy_ratio",
                   "latency_ratio", "edp_ratio"]
BASELINE_COLUMNS = ["model", "device", "seqlen", "batch", "energy_J", "latency_s"]


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def csv_text(rows: list[dict], columns: list[str], meta: dict) -> str:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={fmt(v)}" for k, v in meta.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_atomic(path: str, text: str):
    """Write via a temp file in the same directory so a failure leaves nothing behind."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".apsoft-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fp:
            fp.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path: str, required: list[str]) -> list[dict]:
    with open(path) as fp:
        lines = [ln for ln in fp if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not lines:
        raise InvalidArgument(f"{path}: empty CSV")
    missing = set(required) - set(csv.DictReader(lines[:1]).fieldnames or [])
    if missing:
        raise InvalidArgument(f"{path}: missing columns {sorted(missing)}")
    return rows


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fp:
                raw = json.load(fp)
        except json.JSONDecodeError as e:
            raise InvalidArgument(f"{args.config}: malformed JSON ({e})") from None
        if not isinstance(raw, dict):
            raise InvalidArgument("config must be a JSON object")
        if isinstance(raw.get("cost_params"), str):
            with open(raw["cost_params"]) as fp:
                raw["cost_params"] = json.load(fp)
    rc = RunConfig.from_dict(raw)
    if args.seed is not None:
        rc.seed = args.seed
    if args.out is not None:
        rc.out = args.out
    rc.strict_widths = rc.strict_widths or args.strict_widths
    rc.paper_formulas_only = rc.paper_formulas_only or args.paper_formulas_only
    return rc


def _meta(command: str, rc: RunConfig, **extra) -> dict:
    return {"tool": f"apsoft-{version()}", "command": command, "seed": rc.seed, **extra}


# -- commands ----------------------------------------------------------------

def cmd_accuracy(rc: RunConfig, out=None) -> str:
    out = out or sys.stdout
    rows = accuracy_sweep(rc)
    text = csv_text(rows, ACCURACY_COLUMNS,
                    _meta("accuracy", rc, samples=rc.samples, distribution=rc.distribution,
                          calibrated="n/a"))
    path = os.path.join(rc.out, "accuracy.csv")
    write_atomic(path, text)
    print(f"wrote {len(rows)} rows to {path}", file=out)
    return path


def cmd_cost(rc: RunConfig, out=None) -> str:
    out = out or sys.stdout
    rows = cost_sweep(rc)
    calibrated = all(r["calibrated"] for r in rows)
    text = csv_text(rows, COST_COLUMNS,
                    _meta("cost", rc, calibrated=calibrated,
                          paper_formulas_only=rc.paper_formulas_only))
    path = os.path.join(rc.out, "cost.csv")
    write_atomic(path, text)
    print(f"wrote {len(rows)} rows to {path}", file=out)
    return path


def cmd_compare(rc: RunConfig, cost_path: str, baseline_path: str, out=None) -> str:
    out = out or sys.stdout
    cost = read_csv(cost_path, ["model", "preset", "seqlen", "batch", "energy_J", "latency_s"])
    base = read_csv(baseline_path, BASELINE_COLUMNS)
    rows = compare_rows(cost, base)
    text = csv_text(rows, COMPARE_COLUMNS, _meta("compare", rc, calibrated="inherited"))
    path = os.path.join(rc.out, "compare.csv")
    write_atomic(path, text)
    print(f"wrote {len(rows)} rows to {path}", file=out)
    return path


def simulate(doc: dict, rc: RunConfig) -> dict:
    if not isinstance(doc, dict) or "values" not in doc:
        raise InvalidArgument("simulate input needs a 'values' array")
    cfg = parse_preset_key(doc.get("preset", DEFAULT_PRESET))
    T_C = float(doc.get("T_C", rc.T_C.get(cfg.M, DEFAULT_T_C.get(cfg.M, -7.0))))
    values = np.asarray(doc["values"], dtype=np.float64)
    if values.ndim != 1:
        raise InvalidArgument("'values' must be a flat array")
    if len(values) < 2 or len(values) % 2:
        raise InvalidArgument(f"need an even number of values (two per AP row), got {len(values)}")
    D = doc.get("D", rc.D)
    D = cfg.D if D is None else int(D)
    scheme = make_scheme(cfg.M, T_C)
    consts = derive_constants(scheme, cfg, strict=rc.strict_widths)
    v = quantize(values, scheme)
    res = run_softmax_instance(v, cfg, consts, D)
    rep = verify_against_ref(v, cfg, consts, D, result=res)
    predicted = instance_cycles(cfg, len(values), D, rc.paper_formulas_only)
    probs = dequantize_output(res.out_int, D)
    return {
        "preset": cfg.key, "T_C": T_C, "D": D,
        "out_probs": [float(f"{p:.9g}") for p in probs],
        "out_int": [int(x) for x in res.out_int],
        "cycles": res.cycles, "predicted_cycles": predicted,
        "equivalence": rep.ok, "first_divergence": rep.first_divergence,
        "step_trace": [
            {"index": s.index, "name": s.name, "kernels": list(s.kernels), "cycles": s.cycles,
             "compares": s.compares, "writes": s.writes, "extension": s.extension,
             "digests": s.digests}
            for s in res.steps
        ],
    }


def cmd_simulate(rc: RunConfig, input_path: str, out=None) -> dict:
    out = out or sys.stdout
    try:
        with open(input_path) as fp:
            doc = json.load(fp)
    except json.JSONDecodeError as e:
        raise InvalidArgument(f"{input_path}: malformed JSON ({e})") from None
    result = simulate(doc, rc)
    text = json.dumps(result, indent=2) + "\n"
    if rc.out:
        write_atomic(os.path.join(rc.out, "simulate.json"), text)
    out.write(text)
    return result


XOR_A = [0b11, 0b00, 0b10, 0b11]
XOR_B = [0b01, 0b01, 0b10, 0b10]
XOR_EXPECTED = [0b10, 0b01, 0b00, 0b01]


def demo_xor(out=None) -> tuple[list[int], int, int]:
    """Two-bit XOR on a 4-row AP, printing every pass."""
    out = out or sys.stdout
    ap = new_ap(4, 7, zero_col=6)
    A, B, R = ColumnField(0, 2), ColumnField(2, 2), ColumnField(4, 2)
    ap.store_values(A, np.array(XOR_A))
    ap.store_values(B, np.array(XOR_B))

    def show(title):
        print(title, file=out)
        for r in range(4):
            bits = lambda f: "".join(str(ap.cell(r, f.col(i))) for i in reversed(range(f.width)))
            print(f"  row {r}: A={bits(A)} B={bits(B)} R={bits(R)}", file=out)

    def log(rec):
        print(f"  cycle {rec['cycle']:2d} {rec['kind']:7s} key={rec['key']:#09b} "
              f"mask={rec['mask']:#09b} tagged={rec['tag_popcount']}", file=out)

    show("initial state")
    ap.trace = log
    rep = K.k_xor(ap, A, B, R)
    ap.trace = None
    show("final state")
    result = [int(x) for x in ap.read_column(R)]
    print(f"result={[format(x, '#04b') for x in result]} "
          f"compares={rep.compares} writes={rep.writes}", file=out)
    return result, rep.compares, rep.writes


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--strict-widths", action="store_true",
                        help="fail instead of saturating when a value exceeds its width")
    common.add_argument("--paper-formulas-only", action="store_true",
                        help="charge kernels without a published formula as multiplications")
    p = argparse.ArgumentParser(prog="apsoft", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("accuracy", parents=[common], help="error sweep over the precision grid")
    sub.add_parser("cost", parents=[common], help="latency/energy/EDP sweep")
    c = sub.add_parser("compare", parents=[common], help="ratios against a GPU baseline CSV")
    c.add_argument("--cost", required=True, help="CSV written by 'apsoft cost'")
    c.add_argument("--baseline", required=True, help="baseline CSV")
    s = sub.add_parser("simulate", parents=[common], help="run one instance on the simulator")
    s.add_argument("--input", required=True, help="JSON with values, preset and optional T_C")
    sub.add_parser("demo-xor", parents=[common], help="4-row XOR walkthrough")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "demo-xor":
            result, _, _ = demo_xor()
            return 0 if result == XOR_EXPECTED else 1
        rc = load_config(args)
        if args.command == "simulate":
            if args.out is None:
                rc.out = ""
            res = cmd_simulate(rc, args.input)
            return 0 if res["equivalence"] else 1
        if args.command == "accuracy":
            cmd_accuracy(rc)
        elif args.command == "cost":
            cmd_cost(rc)
        elif args.command == "compare":
            cmd_compare(rc, args.cost, args.baseline)
        return 0
    except (ApSoftError, ValueError, KeyError, OSError) as e:
        print(f"apsoft: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
