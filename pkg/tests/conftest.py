"""Session-wide fixtures: the gamma = 3 profile and everything computed from it.

The expensive objects (profile, spectra, the N = 2048 projected run, exact-profile
particle paths) are built once and shared by the unit and acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from implosion.linear_analysis import assemble_L, coercivity_check, coercivity_grid, spectrum, spectrum_grid
from implosion.profile_solver import compute_profile
from implosion.simulator import InitCondition, SimConfig, Simulator, make_initial_data, sim_grid
from implosion.weights import build_phiA

GAMMA = 3.0
C_IN_FACTOR = 32.0  # C_in = 32 R4


@dataclass
class Timed:
    value: object
    seconds: float


def timed(fn, *args, **kw) -> Timed:
    t0 = time.perf_counter()
    v = fn(*args, **kw)
    return Timed(v, time.perf_counter() - t0)


@dataclass
class Run:
    sim: Simulator
    initial: object
    final: object
    diag: object
    seconds: float
    C_in: float


def run_ic(profile, weights, guesses, n: int, s_span: float, C_in: float, ckpt_ds: float = 0.0, **ic) -> Run:
    """Evolve the cutoff initial data on an n-node grid, projecting when guesses are given."""
    base = SimConfig(n=n, s_span=s_span, project_unstable=guesses is not None, n_diag=10)
    grid = sim_grid(profile, base, C_in)
    st = make_initial_data(profile, grid, InitCondition(C_in, **ic))
    if ckpt_ds > 0:
        probe = Simulator(profile, grid, None, SimConfig(n=n, well_balanced=False))
        stride = max(1, int(round(ckpt_ds / probe.stable_step(st))))
        base = SimConfig(n=n, s_span=s_span, project_unstable=base.project_unstable, n_diag=10,
                         n_checkpoint=stride)
    sim = Simulator(profile, grid, weights, base, unstable_guesses=guesses)
    t0 = time.perf_counter()
    final, diag = sim.run(st)
    return Run(sim, st, final, diag, time.perf_counter() - t0, C_in)


@pytest.fixture(scope="session")
def solved():
    t = timed(compute_profile, GAMMA)
    prof, rep, curves = t.value
    return prof, rep, curves, t.seconds


@pytest.fixture(scope="session")
def profile(solved):
    return solved[0]


@pytest.fixture(scope="session")
def report(solved):
    return solved[1]


@pytest.fixture(scope="session")
def curves(solved):
    return solved[2]


@pytest.fixture(scope="session")
def weights(profile):
    return build_phiA(profile)


@pytest.fixture(scope="session")
def spectra(profile):
    g = spectrum_grid(300, 50.0, profile.xi_s)
    coarse = spectrum(assemble_L(profile, g), profile.r)
    fine = spectrum(assemble_L(profile, g.refined(2)), profile.r)
    return coarse, fine


@pytest.fixture(scope="session")
def coercivity(profile, weights):
    return coercivity_check(profile, weights, coercivity_grid(), m=6, n_samples=100, seed=0)


@pytest.fixture(scope="session")
def C_in(coercivity):
    return C_IN_FACTOR * coercivity.R4


@pytest.fixture(scope="session")
def blowup_run(profile, weights, spectra, C_in):
    """N = 2048, s-span 8, C_in = 32 R4, unstable projection on, checkpoints every ~0.01 in s."""
    return run_ic(profile, weights, spectra[0].unstable, 2048, 8.0, C_in, ckpt_ds=0.01)


@pytest.fixture(scope="session")
def blowup_field(blowup_run):
    from implosion.physical_diagnostics import CheckpointField

    return CheckpointField(blowup_run.sim.grid, blowup_run.diag.checkpoints)


@pytest.fixture(scope="session")
def vorticity_2048(profile, blowup_field):
    from implosion.physical_diagnostics import check_specific_vorticity

    return timed(check_specific_vorticity, blowup_field, profile.r, profile.alpha)


@pytest.fixture(scope="session")
def exact_flow(profile):
    from implosion.physical_diagnostics import trace_profile_flow

    return timed(trace_profile_flow, profile)


# ---------------------------------------------------------------
# acceptance summary, printed at the end of the session

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def record():
    def put(criterion: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return put


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
