"""Nonlinear run from cutoff data with unstable projection; prints the blowup fits and integral contrast.

    python3 scripts/blowup_run.py [--n 2048] [--s-span 8] [--out runs/blowup]
"""

import argparse
import time
from pathlib import Path

from implosion.linear_analysis import assemble_L, coercivity_check, coercivity_grid, spectrum, spectrum_grid
from implosion.physical_diagnostics import bkm_contrast, blowup_fit
from implosion.profile_solver import compute_profile
from implosion.simulator import InitCondition, SimConfig, Simulator, make_initial_data, sim_grid, write_diagnostics
from implosion.weights import build_phiA


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--s-span", type=float, default=8.0)
    ap.add_argument("--gamma", type=float, default=3.0)
    ap.add_argument("--out", default="runs/blowup")
    args = ap.parse_args()

    prof = compute_profile(args.gamma)[0]
    wf = build_phiA(prof)
    C_in = 32.0 * coercivity_check(prof, wf, coercivity_grid(), m=6, n_samples=100, seed=0).R4
    guesses = spectrum(assemble_L(prof, spectrum_grid(300, 50.0, prof.xi_s)), prof.r).unstable
    cfg = SimConfig(n=args.n, s_span=args.s_span, project_unstable=True, n_diag=10)
    grid = sim_grid(prof, cfg, C_in)
    t0 = time.perf_counter()
    _, diag = Simulator(prof, grid, wf, cfg, unstable_guesses=guesses).run(
        make_initial_data(prof, grid, InitCondition(C_in)))
    print(f"r = {prof.r:.12f}, C_in = {C_in:g}, N = {args.n}, {time.perf_counter() - t0:.0f} s")
    write_diagnostics(Path(args.out) / "diagnostics.txt", diag, {"C_in": C_in, "T": 1.0, "initial": "ic"})

    fit = blowup_fit(diag, prof.r, prof.alpha)
    for key, err in fit.errors().items():
        print(f"{key:16s} {getattr(fit, key):.6g}  predicted {getattr(fit, key + '_predicted'):.6g}  rel err {err:.2e}")
    print(f"fitted over {fit.decades:.2f} decades of T - t")

    ends = [e for e in (4.0, 6.0, 8.0) if e <= args.s_span + 1e-9]
    if len(ends) >= 2:
        bk = bkm_contrast(diag, prof.r, ends, float(diag.s[0]))
        print("int max|omega| dt:", " ".join(f"{v:.6e}" for v in bk.omega_integrals), "cauchy" if bk.omega_cauchy else "")
        print("int max|div u| dt:", " ".join(f"{v:.6e}" for v in bk.divu_integrals),
              "rates", " ".join(f"{v:.3f}" for v in bk.divu_growth_rates), f"(threshold {bk.required_rate:.3f})")


if __name__ == "__main__":
    main()
