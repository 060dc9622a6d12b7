"""Regenerates the packaged default data files in crates/core/data."""
import cmath
import math
import os

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data")
DT = 0.1
V_E = 26.2
rng = np.random.default_rng(20240611)


def u(lo, hi):
    return round(float(rng.uniform(lo, hi)), 4)


def ov():
    return {"v_max": u(30, 36), "s_c": u(20, 30), "w": u(10, 15)}


def hdv_rows(n=50):
    rows = []
    for _ in range(n):
        rows.append(("IDM", {"v0": u(30, 38), "T": u(1.0, 1.8), "s0": u(1.5, 3), "a": u(1, 2), "b": u(1.5, 2.5), "delta": 4}))
    for _ in range(n):
        rows.append(("FVDM", {**ov(), "kappa": u(0.4, 0.9), "lambda": u(0.3, 0.6)}))
    for _ in range(n):
        rows.append(("GFM", {**ov(), "tau": u(0.6, 1.2), "tau_int": u(0.5, 1.0), "r_int": u(8, 15), "d_safe": u(1.5, 3), "t_safe": u(0.8, 1.4)}))
    for _ in range(n):
        rows.append(("OVM", {**ov(), "kappa": u(0.6, 1.2)}))
    return rows


def hl_gain(p, w):
    z = cmath.exp(1j * w * DT)
    c = 1 - p["c1"] / z - p["c2"] / z**2
    integ = p["k_s"] * DT / (z - 1)
    den = (z - 1) * c / DT + integ + p["k_v"] + p["k_s"] * p["h"]
    return abs((integ + p["k_v"]) / den)


def hl_stable(p):
    ws = np.linspace(1e-4, math.pi / DT, 4000)
    return max(hl_gain(p, w) for w in ws) <= 1.0 + 1e-9


def hl_rows(n=50):
    rows = []
    while len(rows) < n:
        p = {"s0": u(1.5, 2.5), "h": u(1.3, 1.8), "k_s": u(0.06, 0.14), "k_v": u(0.8, 1.1), "c1": u(0, 0.3), "c2": u(-0.15, 0.05)}
        if hl_stable(p):
            rows.append(("HL", p))
    return rows


def write(name, rows):
    cols = []
    for _, p in rows:
        for k in p:
            if k not in cols:
                cols.append(k)
    with open(os.path.join(OUT, name), "w") as f:
        f.write(",".join(["model"] + cols) + "\n")
        for m, p in rows:
            f.write(",".join([m] + [str(p[c]) if c in p else "" for c in cols]) + "\n")


def leader():
    # cruise, brake, hold, recover, cruise
    segs = [(15.0, 0.0), (4.0, -2.5), (5.0, 0.0), (10.0, 1.0), (36.0, 0.0)]
    t, x, v = 0.0, 0.0, V_E
    lines = ["t,x,v,a"]
    for dur, a in segs:
        for _ in range(int(round(dur / DT))):
            lines.append(f"{t:.1f},{x:.6f},{v:.6f},{a}")
            x += v * DT
            v += a * DT
            t += DT
    lines.append(f"{t:.1f},{x:.6f},{v:.6f},0")
    with open(os.path.join(OUT, "leader_profile.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    write("hdv_posterior.csv", hdv_rows())
    write("hl_posterior.csv", hl_rows())
    leader()


def ea_rows(n=200):
    lines = ["E0,d,E_T,w1,w2,w3,weight"]
    for _ in range(n):
        w = rng.dirichlet([2.0, 2.0, 2.0])
        w = [round(float(x), 4) for x in w[:2]]
        w.append(round(1.0 - w[0] - w[1], 4))
        lines.append(",".join(str(x) for x in [u(0, 5), u(0.1, 0.4), u(20, 60)] + w + [1.0]))
    with open(os.path.join(OUT, "ea_posterior.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    ea_rows()
