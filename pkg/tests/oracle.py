"""Independent pure-Python oracles. Nothing here imports apsoft."""

import math
from fractions import Fraction

A, B, C = Fraction("0.3585"), Fraction("1.353"), Fraction("0.344")


def constants(M, T_C):
    S = Fraction(-T_C) / (2 ** (M - 1) - 1)
    ln2 = Fraction(math.log(2))
    v_ln2 = math.floor(ln2 / S)
    if v_ln2 < 1:
        return {"v_ln2": v_ln2}
    return {
        "v_ln2": v_ln2,
        "mu": 4 ** M // v_ln2,
        "v_b": math.floor(B / S),
        "v_c": math.floor(C / (A * S * S)),
    }


def softmax_ints(v, M, T_C, w_poly, w_va, w_sum, D):
    """Scalar integer softmax on a list of non-positive ints; returns a trace dict."""
    k = constants(M, T_C)
    m = max(v)
    qs, vcs, polys, vas = [], [], [], []
    for x in v:
        mag = m - x
        q, r = divmod(mag, k["v_ln2"])
        vc = -r
        poly = min((vc + k["v_b"]) ** 2 + k["v_c"], 2 ** w_poly - 1)
        va = min(poly >> min(q, w_poly), 2 ** w_va - 1)
        qs.append(q), vcs.append(vc), polys.append(poly), vas.append(va)
    s = min(sum(vas), 2 ** w_sum - 1)
    out = [(a << D) // s for a in vas]
    return {"q": qs, "v_corr": vcs, "poly": polys, "v_approx": vas, "sum": s, "out": out}
