"""Smoke test for the torus_mfg_py extension.

Run from the repository root after building the module:
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import torus_mfg_py as mfg  # noqa: E402

UNIFORM = """
[problem]
kind = "evolutive"
nu = 1.0
beta = 2.0
n_side = 8
n_steps = 16

[cost]
kind = "local"
local = { preset = "linear" }

[study]
levels = [[4, 8], [8, 16], [16, 32]]
"""

ERGODIC = """
[problem]
kind = "ergodic"
nu = 0.6
beta = 2.0
n_side = 8

[cost]
kind = "local"
local = { preset = "linear" }
"""


def check(cond, message):
    if not cond:
        raise SystemExit(f"FAIL: {message}")
    print(f"ok: {message}")


def main():
    sol = mfg.solve(UNIFORM)
    dt = 1.0 / 16
    err = max(
        abs(v - n * dt) for n, s in enumerate(sol["u"]) for v in s
    )
    check(sol["converged"], "uniform preset converges")
    check(len(sol["u"]) == 17 and len(sol["u"][0]) == 64, "trajectory shape is 17 x 64")
    check(err <= 1e-10, f"u^n = n dt to {err:.1e}")
    check(sol["densities"]["max_mass_deviation"] <= 1e-9, "mass is conserved")

    erg = mfg.solve(ERGODIC)
    check(abs(erg["lambda"] - 1.0) <= 1e-8, f"zero Hamiltonian gives lambda = {erg['lambda']:.12f}")
    h2 = 1.0 / 64
    check(abs(h2 * sum(erg["m"]) - 1.0) <= 1e-12, "stationary density has unit mass")

    rep = mfg.study(UNIFORM)
    check(rep["strictly_decreasing"], "uniform study passes the decrease check")
    check(all(l["err_u_sup"] <= 1e-8 for l in rep["levels"]), "uniform study errors are at roundoff")

    for beta in (1.5, 2.0, 3.0):
        lem = mfg.lemma_suite(beta, samples=200, seed=7)
        ide = mfg.identity_suite(beta, samples=10, seed=7)
        adj = mfg.adjoint_suite(beta, probes=10, seed=7)
        check(lem["pass"] and ide["pass"] and adj["pass"], f"verification suites pass at beta = {beta}")

    try:
        mfg.solve(UNIFORM.replace("beta = 2.0", "beta = 0.5"))
    except ValueError as e:
        check("beta > 1" in str(e), "invalid beta raises ValueError")
    else:
        raise SystemExit("FAIL: invalid beta was accepted")

    check(not math.isnan(sol["final_change"]), "report fields are plain floats")
    print("smoke test passed")


if __name__ == "__main__":
    main()
