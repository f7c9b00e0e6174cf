"""Grid refinement of the stationarity residual and of the specific-vorticity drift.

    python3 scripts/refinement_study.py [--ns 512 1024 2048] [--drift-ns 1024 2048] [--out runs/refinement]
"""

import argparse
from pathlib import Path

from implosion.linear_analysis import assemble_L, coercivity_check, coercivity_grid, spectrum, spectrum_grid
from implosion.physical_diagnostics import CheckpointField, check_specific_vorticity
from implosion.profile_solver import compute_profile
from implosion.radial import profile_grid
from implosion.simulator import InitCondition, SimConfig, Simulator, make_initial_data, sim_grid, stationarity_residual
from implosion.textio import write_table
from implosion.weights import build_phiA


def drift_at(prof, wf, guesses, n, C_in, s_span=8.0, ckpt_ds=0.01):
    cfg = SimConfig(n=n, s_span=s_span, project_unstable=True, n_diag=10)
    grid = sim_grid(prof, cfg, C_in)
    st = make_initial_data(prof, grid, InitCondition(C_in))
    probe = Simulator(prof, grid, None, SimConfig(n=n, well_balanced=False))
    cfg = SimConfig(n=n, s_span=s_span, project_unstable=True, n_diag=10,
                    n_checkpoint=max(1, round(ckpt_ds / probe.stable_step(st))))
    _, diag = Simulator(prof, grid, wf, cfg, unstable_guesses=guesses).run(st)
    return check_specific_vorticity(CheckpointField(grid, diag.checkpoints), prof.r, prof.alpha).max_drift


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ns", type=int, nargs="+", default=[512, 1024, 2048, 4096])
    ap.add_argument("--drift-ns", type=int, nargs="*", default=[1024, 2048])
    ap.add_argument("--gamma", type=float, default=3.0)
    ap.add_argument("--out", default="runs/refinement")
    args = ap.parse_args()
    out = Path(args.out)

    prof = compute_profile(args.gamma)[0]
    res = [stationarity_residual(prof, profile_grid(n, 2000.0, prof.xi_s, gain=3.0)) for n in args.ns]
    ratio = [float("nan")] + [res[i - 1] / res[i] for i in range(1, len(res))]
    for n, v, q in zip(args.ns, res, ratio):
        print(f"N={n:5d}  residual {v:.3e}  ratio {q:.2f}")
    write_table(out / "stationarity.txt", {"N": args.ns, "residual": res, "ratio": ratio}, {"r": prof.r})

    if args.drift_ns:
        wf = build_phiA(prof)
        R4 = coercivity_check(prof, wf, coercivity_grid(), m=6, n_samples=100, seed=0).R4
        guesses = spectrum(assemble_L(prof, spectrum_grid(300, 50.0, prof.xi_s)), prof.r).unstable
        drift = [drift_at(prof, wf, guesses, n, 32.0 * R4) for n in args.drift_ns]
        for n, d in zip(args.drift_ns, drift):
            print(f"N={n:5d}  max omega/rho drift {d:.3e}")
        write_table(out / "vorticity_drift.txt", {"N": args.drift_ns, "drift": drift}, {"C_in": 32.0 * R4})


if __name__ == "__main__":
    main()
