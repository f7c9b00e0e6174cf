"""Command-line pipeline: profile -> verify -> spectrum -> evolve -> diagnose, plus sweeps.

Configuration is sectioned ``key = value`` text.  Every key has a default; unknown
keys are rejected.  Outputs are plain columnar text at 17 significant digits and a
JSON manifest per output directory, both written atomically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .textio import atomic_write, fmt, parse_value, read_table, write_table

OUT_ROOT_ENV = "IMPLOSION_OUT_ROOT"

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


class VerificationFailure(RuntimeError):
    pass


# ---------------------------------------------------------------
# configuration

# section -> key -> (default, help)
DEFAULTS: dict[str, dict[str, tuple[object, str]]] = {
    "profile": {
        "gamma": (3.0, "adiabatic exponent"),
        "r_bracket": ("auto", "'lo,hi' search window for r, or auto for the admissible window"),
        "candidate": (0, "index of the sign-change sub-bracket, by increasing r"),
        "xi_s": (2.0, "sonic radius fixing the scaling gauge"),
    },
    "grid": {
        "N": (2048, "simulation nodes"),
        "xi_max": (0.0, "simulation outer radius; 0 means max(2 C_in, 1000 xi_s)"),
        "clustering": (3.0, "extra node density across the sonic radius (0 disables)"),
        "spectrum_N": (300, "nodes of the coarse spectrum grid; the fine grid nests at 2N-1"),
        "spectrum_xi_max": (50.0, "outer radius of the spectrum grid"),
        "coercivity_N": (600, "nodes of the coercivity grid"),
        "coercivity_xi_max": (150.0, "outer radius of the coercivity grid"),
    },
    "tolerances": {
        "ode_rtol": (1e-11, "relative tolerance of the phase-curve integrations"),
        "bisect_tol": (1e-10, "bisection tolerance on r"),
        "cfl": (0.4, "CFL number of the evolution"),
    },
    "sim": {
        "C_in": (0.0, "initial-data cutoff radius; 0 means 32 R4 from the verify stage"),
        "T": (1.0, "blowup time gauge"),
        "s_end": (8.0, "s-span of the evolution"),
        "initial": ("ic", "ic (radial and swirl perturbation), swirl (A only), radial, or profile"),
        "project_unstable": (True, "remove unstable-mode components after every step"),
        "frozen_background": (False, "evolve A only on the fixed profile"),
        "n_diag": (50, "steps between diagnostics records"),
        "checkpoint_ds": (0.05, "s-spacing of checkpoint files (0 disables)"),
        "seed": (0, "seed of every random draw"),
    },
    "coercivity": {
        "m": (6, "number of Laplacians in the high-order inner product"),
        "n_samples": (100, "random test fields per form"),
    },
    "diagnose": {
        "trajectory_s_end": (120.0, "s-span of exact-profile particle paths"),
        "a_min_exp": (-50.0, "log10 of the smallest sampled initial radius"),
        "a_max_exp": (1.0, "log10 of the largest sampled initial radius"),
        "bkm_s_ends": ("4,6,8", "s_end values of the time-integral comparison"),
    },
    "sweep": {
        "cases": ("3.0:1024,3.0:2048", "comma-separated gamma:N cases"),
        "stages": ("profile,evolve", "stages run for each case"),
        "workers": (2, "concurrent cases"),
    },
    "paths": {
        "profile_file": ("profile.txt", "profile file, relative to out_dir"),
        "weight_file": ("weights.txt", "weight file, relative to out_dir"),
        "out_dir": ("runs/default", "output directory; relative paths resolve under $" + OUT_ROOT_ENV),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def with_overrides(self, pairs) -> "RunConfig":
        vals = {s: dict(d) for s, d in self.values.items()}
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            _assign(vals, k.strip(), v.strip())
        return validate(RunConfig(vals))

    def lines(self) -> list[str]:
        out = []
        for sec in DEFAULTS:
            out.append(f"[{sec}]")
            for key in DEFAULTS[sec]:
                out.append(f"{key} = {fmt(self.values[sec][key])}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def out_dir(self) -> Path:
        p = Path(str(self["paths.out_dir"]))
        if not p.is_absolute():
            root = os.environ.get(OUT_ROOT_ENV)
            if root:
                p = Path(root) / p
        return p

    def path(self, key: str) -> Path:
        p = Path(str(self[key]))
        return p if p.is_absolute() else self.out_dir() / p


def default_config() -> RunConfig:
    return RunConfig({s: {k: v[0] for k, v in d.items()} for s, d in DEFAULTS.items()})


def _coerce(sec: str, key: str, raw):
    default = DEFAULTS[sec][key][0]
    if isinstance(raw, str):
        val = parse_value(raw)
    else:
        val = raw
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{sec}.{key} must be true or false, got {raw!r}")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{sec}.{key} must be an integer, got {raw!r}")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{sec}.{key} must be a number, got {raw!r}")
        return float(val)
    return str(raw)


def _assign(vals: dict, dotted: str, raw) -> None:
    if "." not in dotted:
        raise ConfigError(f"key {dotted!r} must be written section.key")
    sec, key = dotted.split(".", 1)
    if sec not in DEFAULTS:
        raise ConfigError(f"unknown section [{sec}]")
    if key not in DEFAULTS[sec]:
        raise ConfigError(f"unknown key {key!r} in [{sec}]")
    vals[sec][key] = _coerce(sec, key, raw)


def parse_config_text(text: str) -> RunConfig:
    vals = default_config().values
    vals = {s: dict(d) for s, d in vals.items()}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in DEFAULTS:
                raise ConfigError(f"line {n}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        if section is None:
            raise ConfigError(f"line {n}: key outside any section")
        k, v = line.split("=", 1)
        _assign(vals, f"{section}.{k.strip()}", v.strip())
    return validate(RunConfig(vals))


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text())


def r_bracket(cfg: RunConfig) -> tuple[float, float] | None:
    raw = str(cfg["profile.r_bracket"]).strip()
    if raw == "auto":
        return None
    try:
        lo, hi = (float(t) for t in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"profile.r_bracket must be 'lo,hi' or auto, got {raw!r}") from exc
    return lo, hi


def validate(cfg: RunConfig) -> RunConfig:
    from .phase_plane import BracketError, admissible_bracket

    gamma = cfg["profile.gamma"]
    if not gamma > 1.0:
        raise ConfigError("profile.gamma must exceed 1")
    alpha = (gamma - 1.0) / 2.0
    br = r_bracket(cfg)
    try:
        lo, hi = admissible_bracket(alpha)
    except BracketError as exc:
        raise ConfigError(str(exc)) from exc
    if br is not None:
        if not (lo <= br[0] < br[1] <= hi):
            raise ConfigError(f"r_bracket {br} lies outside the admissible window ({lo:.9g}, {hi:.9g})")
    if cfg["grid.N"] < 16 or cfg["grid.spectrum_N"] < 16 or cfg["grid.coercivity_N"] < 16:
        raise ConfigError("grids need at least 16 nodes")
    if not 0 < cfg["tolerances.cfl"] <= 1.0:
        raise ConfigError("tolerances.cfl must lie in (0, 1]")
    if not cfg["sim.T"] > 0:
        raise ConfigError("sim.T must be positive")
    if cfg["sim.initial"] not in ("ic", "swirl", "radial", "profile"):
        raise ConfigError(f"sim.initial {cfg['sim.initial']!r} is not one of ic, swirl, radial, profile")
    if cfg["sim.C_in"] < 0 or cfg["sim.s_end"] <= 0:
        raise ConfigError("sim.C_in must be >= 0 and sim.s_end > 0")
    return cfg


# ---------------------------------------------------------------
# manifest


def update_manifest(cfg: RunConfig, stage: str, files, checks: dict, extra: dict | None = None) -> Path:
    out = cfg.out_dir()
    path = out / "manifest.json"
    data = {}
    if path.exists():
        data = json.loads(path.read_text())
    if data.get("config_hash") not in (None, cfg.digest()):
        data = {}  # a different configuration starts a fresh manifest
    import numpy
    import scipy

    data["config_hash"] = cfg.digest()
    data["versions"] = {"implosion": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
                        "python": sys.version.split()[0]}
    data.setdefault("stages", {})
    data["stages"][stage] = {
        "files": sorted(str(Path(f).relative_to(out)) if Path(f).is_relative_to(out) else str(f) for f in files),
        "checks": {k: bool(v) for k, v in checks.items()},
        "passed": all(bool(v) for v in checks.values()),
        **({"values": {k: _jsonable(v) for k, v in extra.items()}} if extra else {}),
    }
    atomic_write(out / "config.txt", cfg.text())
    atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return str(v)


def write_report(path, values: dict) -> None:
    atomic_write(path, "".join(f"{k} = {fmt(v)}\n" for k, v in values.items()))


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = parse_value(v)
    return out


# ---------------------------------------------------------------
# profile files


def tolerances(cfg: RunConfig):
    from .profile_solver import SolverTolerances

    return SolverTolerances(rtol=cfg["tolerances.ode_rtol"], bisect_tol=cfg["tolerances.bisect_tol"])


def write_profile(path, profile, report=None, tol=None) -> None:
    from dataclasses import asdict

    from .profile_solver import PROFILE_COLUMNS, SolverTolerances

    header = {"gamma": profile.gamma, "alpha": profile.alpha, "r": profile.r, "xi_s": profile.xi_s,
              "xi_1": profile.xi_1, "kappa": profile.kappa, "W_e": profile.W_e,
              "generated_by": f"implosion {__version__}", "tolerances": (tol or SolverTolerances()).describe()}
    if report is not None:
        header.update({f"report.{k}": v for k, v in asdict(report).items()})
    write_table(path, dict(zip(PROFILE_COLUMNS, profile.columns())), header)


def read_profile(path, with_sampler: bool = True, tol=None):
    from .profile_solver import Profile, SolverTolerances, attach_sampler

    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"profile file {p} is missing; run the profile stage first")
    header, cols = read_table(p)
    prof = Profile(r=float(header["r"]), gamma=float(header["gamma"]), grid=cols["xi"], Ubar=cols["Ubar"],
                   Sigmabar=cols["Sigmabar"], dUbar=cols["dUbar"], dSigmabar=cols["dSigmabar"],
                   d2Ubar=cols["d2Ubar"], d2Sigmabar=cols["d2Sigmabar"], xi_s=float(header["xi_s"]),
                   xi_1=float(header["xi_1"]), kappa=float(header["kappa"]))
    if with_sampler:
        prof = attach_sampler(prof, tol or SolverTolerances())
    return prof


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} is missing; run the {stage} stage first")
    return path


# ---------------------------------------------------------------
# stages


def cmd_profile(cfg: RunConfig) -> int:
    from .profile_solver import compute_profile

    prof, rep, _ = compute_profile(cfg["profile.gamma"], tolerances(cfg), bracket=r_bracket(cfg),
                                   candidate=cfg["profile.candidate"], xi_s=cfg["profile.xi_s"])
    path = cfg.path("paths.profile_file")
    write_profile(path, prof, rep, tolerances(cfg))
    checks = {"profile_properties": rep.passed}
    update_manifest(cfg, "profile", [path], checks, {"r": prof.r})
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


def _load_weights(profile):
    from .weights import build_phiA

    return build_phiA(profile)


def cmd_verify(cfg: RunConfig) -> int:
    from .linear_analysis import coercivity_check, coercivity_grid
    from .weights import WEIGHT_COLUMNS, verification_grid, verify_repulsive_weight, verify_weights

    prof = read_profile(cfg.path("paths.profile_file"), tol=tolerances(cfg))
    wf = _load_weights(prof)
    rr = verify_repulsive_weight(wf, prof, raise_on_fail=False)
    sw = verify_weights(wf, prof)
    xi = verification_grid(prof)
    cols = wf.columns(xi)
    wpath = cfg.path("paths.weight_file")
    write_table(wpath, {k: cols[k] for k in WEIGHT_COLUMNS}, {"lambda_tilde": sw.lambda_tilde, "mu1": rr.mu1})
    grid = coercivity_grid(cfg["grid.coercivity_N"], cfg["grid.coercivity_xi_max"])
    co = coercivity_check(prof, wf, grid, m=cfg["coercivity.m"], n_samples=cfg["coercivity.n_samples"],
                          seed=cfg["sim.seed"])
    cpath = cfg.out_dir() / "coercivity.txt"
    write_report(cpath, {"m": co.m, "lambda": co.lam, "eps": co.eps, "C_m": co.C_m, "C_bar": co.C_bar,
                         "R4": co.R4, "n_pass_L": co.n_pass_L, "n_pass_A": co.n_pass_A,
                         "n_samples": co.n_samples, "far_pass": co.far_pass, "passed": co.passed,
                         "mu1": rr.mu1, "lambda_tilde": sw.lambda_tilde, "repulsive_passed": rr.passed,
                         "swirl_weight_passed": sw.passed})
    checks = {"repulsive_weight": rr.passed, "swirl_weight": sw.passed, "coercivity": co.passed}
    update_manifest(cfg, "verify", [wpath, cpath], checks, {"R4": co.R4, "eps": co.eps})
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


def _spectra(cfg: RunConfig, prof):
    from .linear_analysis import assemble_L, spectrum, spectrum_grid

    g = spectrum_grid(cfg["grid.spectrum_N"], cfg["grid.spectrum_xi_max"], prof.xi_s)
    coarse = spectrum(assemble_L(prof, g), prof.r, cfg["coercivity.m"])
    fine = spectrum(assemble_L(prof, g.refined(2)), prof.r, cfg["coercivity.m"])
    return coarse, fine


def cmd_spectrum(cfg: RunConfig) -> int:
    from .linear_analysis import write_spectrum

    prof = read_profile(cfg.path("paths.profile_file"), tol=tolerances(cfg))
    coarse, fine = _spectra(cfg, prof)
    out = cfg.out_dir()
    files = []
    for sp_ in (coarse, fine):
        p = out / f"spectrum_{sp_.grid.n}.txt"
        write_spectrum(p, sp_)
        files.append(p)
    unstable = out / "unstable.txt"
    write_table(unstable, {"re": coarse.unstable.real, "im": coarse.unstable.imag})
    files.append(unstable)
    checks = {"count_stable_under_refinement": coarse.unstable_count == fine.unstable_count,
              "bulk_gap": max(coarse.bulk_max_real, fine.bulk_max_real) <= -0.9 * coarse.lam}
    update_manifest(cfg, "spectrum", files, checks,
                    {"unstable_count": coarse.unstable_count, "bulk_max_real": coarse.bulk_max_real})
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


def _C_in(cfg: RunConfig) -> float:
    if cfg["sim.C_in"] > 0:
        return cfg["sim.C_in"]
    rep = read_report(_require(cfg.out_dir() / "coercivity.txt", "verify"))
    return 32.0 * float(rep["R4"])


def _unstable_guesses(cfg: RunConfig, prof):
    p = cfg.out_dir() / "unstable.txt"
    if p.exists():
        _, cols = read_table(p)
        return cols["re"] + 1j * cols["im"]
    coarse, _ = _spectra(cfg, prof)
    return coarse.unstable


def sim_config(cfg: RunConfig, C_in: float):
    from .simulator import SimConfig

    return SimConfig(
        n=cfg["grid.N"], xi_max=cfg["grid.xi_max"] or None, cluster_gain=cfg["grid.clustering"],
        cfl=cfg["tolerances.cfl"], s_span=cfg["sim.s_end"], n_diag=cfg["sim.n_diag"],
        frozen_background=cfg["sim.frozen_background"],
        project_unstable=cfg["sim.project_unstable"] and cfg["sim.initial"] != "profile",
        projection_radius=C_in / 4.0,
    )


def cmd_evolve(cfg: RunConfig) -> int:
    from .simulator import (InitCondition, Simulator, SimState, make_initial_data, sim_grid,
                            write_checkpoint, write_diagnostics)

    prof = read_profile(cfg.path("paths.profile_file"), tol=tolerances(cfg))
    wf = _load_weights(prof)
    C_in = _C_in(cfg)
    scfg = sim_config(cfg, C_in)
    grid = sim_grid(prof, scfg, C_in)
    kind = cfg["sim.initial"]
    guesses = _unstable_guesses(cfg, prof) if scfg.project_unstable else None
    ds0 = None
    if cfg["sim.checkpoint_ds"] > 0:
        # pick the checkpoint stride from the CFL step of the initial state
        pre = Simulator(prof, grid, wf, replace(scfg, project_unstable=False, well_balanced=False))
        st_probe = make_initial_data(prof, grid, InitCondition(C_in, cfg["sim.T"]))
        ds0 = pre.stable_step(st_probe)
        scfg = replace(scfg, n_checkpoint=max(1, int(round(cfg["sim.checkpoint_ds"] / ds0))))
    sim = Simulator(prof, grid, wf, scfg, unstable_guesses=guesses)
    if kind == "profile":
        st = SimState(-math.log(cfg["sim.T"]) / prof.r, sim.bg.U.copy(), np.zeros(grid.n), sim.bg.S.copy())
    else:
        ic = InitCondition(C_in, cfg["sim.T"], radial=kind in ("ic", "radial"), swirl=kind in ("ic", "swirl"))
        st = make_initial_data(prof, grid, ic)
    t0 = time.time()
    final, diag = sim.run(st)
    runtime = time.time() - t0
    out = cfg.out_dir()
    dpath = out / "diagnostics.txt"
    write_diagnostics(dpath, diag, {"C_in": C_in, "T": cfg["sim.T"], "initial": kind, "xi_s": prof.xi_s,
                                    "alpha": prof.alpha})
    fpath = out / "final_state.txt"
    write_checkpoint(fpath, grid, final)
    files = [dpath, fpath]
    for i, ck in enumerate(diag.checkpoints):
        p = out / "checkpoints" / f"ckpt_{i:05d}.txt"
        write_checkpoint(p, grid, ck)
        files.append(p)
    checks = {
        "far_field_bound": bool(np.all(diag["E_inf"] <= 2.0 * diag["E_inf"][0])),
        "no_vacuum": bool(np.all(diag["Sigma0"] > 0)),
    }
    if kind == "profile":
        checks["stationary"] = diag.max_drift() < 1e-8
    update_manifest(cfg, "evolve", files, checks, {"runtime_s": runtime, "C_in": C_in, "N": grid.n})
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


def load_checkpoints(cfg: RunConfig):
    from .radial import RadialGrid
    from .simulator import read_checkpoint

    d = _require(cfg.out_dir() / "checkpoints", "evolve")
    states = []
    for p in sorted(d.glob("ckpt_*.txt")):
        _, st = read_checkpoint(p)
        states.append(st)
    return states


def cmd_diagnose(cfg: RunConfig) -> int:
    from .physical_diagnostics import (CheckpointField, bkm_contrast, blowup_fit, check_specific_vorticity,
                                       default_sample_as, trace_profile_flow, trajectory_bounds,
                                       transported_quantity_check, write_trajectories)
    from .simulator import read_diagnostics, sim_grid

    prof = read_profile(cfg.path("paths.profile_file"), tol=tolerances(cfg))
    diag = read_diagnostics(_require(cfg.out_dir() / "diagnostics.txt", "evolve"))
    r, alpha = prof.r, prof.alpha
    out = cfg.out_dir()
    values: dict = {}
    checks: dict = {}
    if diag.config.get("initial") == "ic":
        bf = blowup_fit(diag, r, alpha, cfg["sim.T"])
        err = bf.errors()
        values.update({"sigma_exponent": bf.sigma_exponent, "sigma_exponent_predicted": bf.sigma_exponent_predicted,
                       "omega_exponent": bf.omega_exponent, "omega_exponent_predicted": bf.omega_exponent_predicted,
                       "omega_constant": bf.omega_constant, "omega_constant_predicted": bf.omega_constant_predicted,
                       "decades": bf.decades})
        checks.update({"sigma_exponent": err["sigma_exponent"] < 0.02, "omega_exponent": err["omega_exponent"] < 0.05,
                       "omega_constant": err["omega_constant"] < 0.10})
        s_in = float(diag.s[0])
        ends = [float(x) for x in str(cfg["diagnose.bkm_s_ends"]).split(",")]
        if s_in + max(ends) <= diag.s[-1] + 1e-9:
            bk = bkm_contrast(diag, r, ends, s_in)
            values.update({"omega_integrals": " ".join(fmt(v) for v in bk.omega_integrals),
                           "divu_integrals": " ".join(fmt(v) for v in bk.divu_integrals),
                           "divu_growth_rates": " ".join(fmt(v) for v in bk.divu_growth_rates)})
            checks.update({"omega_integral_cauchy": bk.omega_cauchy, "divu_integral_growth": bk.divu_growth_ok})
        states = load_checkpoints(cfg) if (out / "checkpoints").exists() else []
        if len(states) >= 4:
            from .simulator import SimConfig

            grid = sim_grid(prof, SimConfig(n=int(diag.config["n"]), xi_max=float(diag.config["xi_max"]),
                                            cluster_gain=cfg["grid.clustering"]), float(diag.config["C_in"]))
            vr = check_specific_vorticity(CheckpointField(grid, states), r, alpha)
            values.update({"vorticity_drift": vr.max_drift, "zero_vorticity_max": vr.zero_max_abs})
            checks.update({"vorticity_drift": vr.max_drift < 1e-3, "zero_vorticity": vr.zero_max_abs < 1e-10})
    a = default_sample_as(cfg["diagnose.a_min_exp"], cfg["diagnose.a_max_exp"])
    flow = trace_profile_flow(prof, a, cfg["diagnose.trajectory_s_end"])
    tb = trajectory_bounds(prof, flow=flow)
    tq = transported_quantity_check(prof, flow=flow)
    k0 = tq.reports[0.0]
    kk = tq.reports[float(tq.k_spec)]
    values.update({"trajectory_C": tb.C, "trajectory_c1": tb.c1, "trajectory_c1_slope": tb.c1_slope,
                   "c2": tq.c2, "k_spec": tq.k_spec, "k_sufficient": tq.k_sufficient,
                   "k_sufficient_with_c1": tq.k_sufficient_with_c1, "k_hat": tq.k_hat if tq.k_hat is not None else "none",
                   "k0_growth": k0.growth, "k_spec_sup": kk.sup})
    checks.update({"trajectory_bounds": tb.passed, "k0_unbounded_trend": k0.monotone and k0.growth >= 10.0,
                   "k_spec_bounded": kk.bounded})
    rpath = out / "diagnose.txt"
    write_report(rpath, {**values, **{f"check.{k}": v for k, v in checks.items()}})
    tdir = out / "trajectories"
    files = [rpath] + write_trajectories(tdir, flow)
    update_manifest(cfg, "diagnose", files, checks)
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


STAGES = {"profile": cmd_profile, "verify": cmd_verify, "spectrum": cmd_spectrum, "evolve": cmd_evolve,
          "diagnose": cmd_diagnose}


def _run_case(payload) -> tuple[str, int, float]:
    text, stages = payload
    cfg = parse_config_text(text)
    code = EXIT_OK
    for st in stages:
        code = max(code, run_stage(st, cfg))
        if code in (EXIT_NUMERIC, EXIT_CONFIG):
            break
    with_sampler = cfg.path("paths.profile_file").exists()
    residual = math.nan
    if with_sampler:
        from .radial import RadialGrid, profile_grid
        from .simulator import SimConfig, sim_grid, stationarity_residual

        prof = read_profile(cfg.path("paths.profile_file"), tol=tolerances(cfg))
        C_in = cfg["sim.C_in"] or 128.0
        grid = sim_grid(prof, SimConfig(n=cfg["grid.N"], xi_max=cfg["grid.xi_max"] or None,
                                        cluster_gain=cfg["grid.clustering"]), C_in)
        residual = stationarity_residual(prof, grid)
    return str(cfg.out_dir()), code, residual


def cmd_sweep(cfg: RunConfig) -> int:
    cases = []
    for item in str(cfg["sweep.cases"]).split(","):
        try:
            g, n = item.split(":")
            cases.append((float(g), int(n)))
        except ValueError as exc:
            raise ConfigError(f"sweep case {item!r} is not gamma:N") from exc
    stages = [s.strip() for s in str(cfg["sweep.stages"]).split(",") if s.strip()]
    for s in stages:
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r} in sweep.stages")
    base = cfg.out_dir()
    payloads = []
    for g, n in cases:
        sub = cfg.with_overrides([f"profile.gamma={g!r}", f"grid.N={n}", f"paths.out_dir={base / f'gamma{g:g}_N{n}'}"])
        payloads.append((sub.text(), stages))
    with ProcessPoolExecutor(max_workers=max(1, cfg["sweep.workers"])) as ex:
        results = list(ex.map(_run_case, payloads))
    gam = [c[0] for c in cases]
    ns = [c[1] for c in cases]
    res = [r[2] for r in results]
    ratio = [math.nan] + [res[i - 1] / res[i] if res[i] > 0 else math.nan for i in range(1, len(res))]
    path = base / "refinement.txt"
    write_table(path, {"gamma": gam, "N": ns, "residual": res, "ratio": ratio, "exit": [r[1] for r in results]})
    checks = {f"case_{i}": r[1] == EXIT_OK for i, r in enumerate(results)}
    update_manifest(cfg, "sweep", [path], checks)
    worst = max(r[1] for r in results) if results else EXIT_OK
    return worst


# ---------------------------------------------------------------
# entry point


def run_stage(name: str, cfg: RunConfig) -> int:
    from .linear_analysis import EigSolverFailure, SearchExhausted
    from .profile_solver import GridOutOfRange, NoSignChange, PropertyViolation, SeriesDivergence
    from .simulator import CFLViolation, NaNDetected, VacuumBreach
    from .weights import CascadeFailure, InequalityViolation

    numeric = (SeriesDivergence, NoSignChange, GridOutOfRange, EigSolverFailure, SearchExhausted, CFLViolation,
               NaNDetected, VacuumBreach, CascadeFailure, FloatingPointError, np.linalg.LinAlgError)
    try:
        return STAGES[name](cfg) if name != "sweep" else cmd_sweep(cfg)
    except (ConfigError, MissingArtifact) as exc:
        print(f"{name}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropertyViolation, InequalityViolation, VerificationFailure) as exc:
        print(f"{name}: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except numeric as exc:
        print(f"{name}: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="implosion", description="Self-similar implosion with swirl: pipeline stages.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "sweep", "show-config"):
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", help="sectioned key = value file")
        sp_.add_argument("--out", help="output directory (overrides paths.out_dir)")
        sp_.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        overrides = list(args.override)
        if args.out:
            overrides.append(f"paths.out_dir={args.out}")
        cfg = cfg.with_overrides(overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "show-config":
        sys.stdout.write(cfg.text())
        return EXIT_OK
    code = run_stage(args.command, cfg)
    print(f"{args.command}: exit {code} ({cfg.out_dir()})")
    return code


if __name__ == "__main__":
    sys.exit(main())
