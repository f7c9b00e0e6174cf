import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implosion.cli_io import (
    EXIT_CONFIG,
    EXIT_OK,
    OUT_ROOT_ENV,
    ConfigError,
    MissingArtifact,
    default_config,
    main,
    parse_config_text,
    read_profile,
    read_report,
    write_profile,
    write_report,
)

R_HI = 3.0 / (1.0 + np.sqrt(2.0))
HEADER_KEYS = {"gamma", "alpha", "r", "xi_s", "xi_1", "kappa", "W_e", "generated_by", "tolerances"}


def read_header(path):
    out = {}
    for line in path.read_text().splitlines():
        if not line.startswith("# ") or line.startswith("# columns:"):
            continue
        k, _, v = line[2:].partition("=")
        out[k.strip()] = v.strip()
    return out


class TestConfig:
    def test_text_round_trip(self):
        cfg = default_config()
        assert parse_config_text(cfg.text()) == cfg
        assert parse_config_text(cfg.text()).digest() == cfg.digest()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(16, 10**6), st.floats(0.01, 1.0), st.booleans())
    def test_override_round_trip(self, n, cfl, frozen):
        cfg = default_config().with_overrides(
            [f"grid.N={n}", f"tolerances.cfl={cfl!r}", f"sim.frozen_background={'true' if frozen else 'false'}"])
        again = parse_config_text(cfg.text())
        assert again == cfg
        assert again["grid.N"] == n and again["tolerances.cfl"] == cfl and again["sim.frozen_background"] is frozen

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# header\n\n[grid]\nN = 512  # nodes\n")
        assert cfg["grid.N"] == 512
        assert cfg["grid.spectrum_N"] == 300

    @pytest.mark.parametrize("text", [
        "[grid]\nnodes = 12\n",
        "[mesh]\nN = 12\n",
        "N = 512\n",
        "[grid]\nN 512\n",
        "[grid]\nN = 1.5\n",
        "[sim]\nproject_unstable = yes\n",
        "[sim]\ninitial = vortex\n",
        "[tolerances]\ncfl = 2\n",
        "[profile]\ngamma = 1.0\n",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_bracket_outside_window(self):
        with pytest.raises(ConfigError):
            parse_config_text("[profile]\nr_bracket = 1.0, 1.3\n")
        ok = parse_config_text("[profile]\nr_bracket = 1.01, 1.2\n")
        assert ok["profile.r_bracket"] == "1.01, 1.2"

    def test_out_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ROOT_ENV, str(tmp_path))
        cfg = default_config().with_overrides(["paths.out_dir=runs/x"])
        assert cfg.out_dir() == tmp_path / "runs" / "x"
        assert cfg.path("paths.profile_file") == tmp_path / "runs" / "x" / "profile.txt"
        absolute = default_config().with_overrides([f"paths.out_dir={tmp_path / 'abs'}"])
        assert absolute.out_dir() == tmp_path / "abs"

    def test_report_round_trip(self, tmp_path):
        vals = {"a": 1.0 / 3.0, "n": 7, "flag": True, "name": "x y", "tiny": 1e-300}
        write_report(tmp_path / "rep.txt", vals)
        assert read_report(tmp_path / "rep.txt") == vals


class TestMain:
    def test_show_config(self, capsys):
        assert main(["show-config", "--override", "grid.N=1024"]) == EXIT_OK
        text = capsys.readouterr().out
        assert "[grid]" in text and "N = 1024" in text
        assert parse_config_text(text)["grid.N"] == 1024

    def test_config_file(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("[sim]\ns_end = 2.5\n")
        assert main(["show-config", "--config", str(p)]) == EXIT_OK
        assert "s_end = 2.5" in capsys.readouterr().out

    @pytest.mark.parametrize("argv", [
        ["show-config", "--override", "grid.bogus=1"],
        ["show-config", "--override", "nosection=1"],
        ["show-config", "--override", "profile.r_bracket=0.9,1.1"],
        ["show-config", "--config", "/nonexistent/run.cfg"],
    ])
    def test_config_errors_exit_4(self, argv):
        assert main(argv) == EXIT_CONFIG

    def test_missing_profile_exit_4(self, tmp_path):
        assert main(["evolve", "--out", str(tmp_path), "--override", "sim.C_in=128"]) == EXIT_CONFIG
        assert main(["verify", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert main(["diagnose", "--out", str(tmp_path)]) == EXIT_CONFIG
        with pytest.raises(MissingArtifact):
            read_profile(tmp_path / "profile.txt")


@pytest.fixture(scope="module")
def profile_runs(tmp_path_factory):
    """The profile stage run twice into separate directories."""
    dirs = [tmp_path_factory.mktemp(f"prof{i}") for i in range(2)]
    codes = [main(["profile", "--out", str(d)]) for d in dirs]
    return dirs, codes


class TestProfileStage:
    def test_exit_ok(self, profile_runs):
        assert profile_runs[1] == [EXIT_OK, EXIT_OK]

    def test_bit_identical(self, profile_runs):
        a, b = (d / "profile.txt" for d in profile_runs[0])
        assert a.read_bytes() == b.read_bytes()

    def test_header(self, profile_runs):
        h = read_header(profile_runs[0][0] / "profile.txt")
        assert HEADER_KEYS <= set(h)
        assert 1.0 < float(h["r"]) < R_HI
        assert float(h["gamma"]) == 3.0
        assert float(h["xi_s"]) == 2.0

    def test_manifest(self, profile_runs):
        d = profile_runs[0][0]
        m = json.loads((d / "manifest.json").read_text())
        cfg = parse_config_text((d / "config.txt").read_text())
        assert m["config_hash"] == cfg.digest()
        st_ = m["stages"]["profile"]
        assert st_["passed"] and st_["files"] == ["profile.txt"]
        assert set(m["versions"]) >= {"implosion", "numpy", "scipy", "python"}

    def test_read_matches_solver(self, profile_runs, profile):
        prof = read_profile(profile_runs[0][0] / "profile.txt")
        assert prof.r == profile.r
        np.testing.assert_array_equal(prof.grid, profile.grid)
        np.testing.assert_array_equal(prof.Ubar, profile.Ubar)
        np.testing.assert_array_equal(prof.d2Sigmabar, profile.d2Sigmabar)

    def test_stationary_evolve(self, profile_runs, tmp_path):
        src = profile_runs[0][0] / "profile.txt"
        (tmp_path / "profile.txt").write_bytes(src.read_bytes())
        code = main(["evolve", "--out", str(tmp_path), "--override", "sim.initial=profile",
                     "--override", "grid.N=256", "--override", "sim.C_in=128", "--override", "sim.s_end=0.5",
                     "--override", "sim.checkpoint_ds=0"])
        assert code == EXIT_OK
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["stages"]["evolve"]["checks"]["stationary"]
        assert (tmp_path / "diagnostics.txt").exists() and (tmp_path / "final_state.txt").exists()


def test_profile_file_round_trip(tmp_path, profile, report):
    p = tmp_path / "p.txt"
    write_profile(p, profile, report)
    back = read_profile(p, with_sampler=False)
    for name in ("grid", "Ubar", "Sigmabar", "dUbar", "dSigmabar", "d2Ubar", "d2Sigmabar"):
        np.testing.assert_array_equal(getattr(back, name), getattr(profile, name))
    for name in ("r", "gamma", "xi_s", "xi_1", "kappa"):
        assert getattr(back, name) == getattr(profile, name)
    write_profile(tmp_path / "q.txt", back, report)
    assert (tmp_path / "q.txt").read_bytes() == p.read_bytes()

