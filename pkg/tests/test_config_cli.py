import json

import pytest

from levycsbp.branching import BranchingMechanism, ExponentialTail
from levycsbp.cli import main
from levycsbp.config import ExperimentConfig, preset
from levycsbp.environment import EnvironmentSpec, TwoSidedExponential
from levycsbp.errors import ConfigError, HypothesisError
from levycsbp.report import require_hypotheses, run_validation_suite

SMALL_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


def small_config(**kw):
    base = dict(t_grid=SMALL_GRID, n_paths=2000, dt=0.5, seed=17, name="small")
    base.update(kw)
    return ExperimentConfig(BranchingMechanism(gaussian=1.0), EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0),
                            **base)


def write(tmp_path, cfg, name="cfg.toml"):
    path = tmp_path / name
    cfg.save(path)
    return str(path)


def test_toml_round_trip_is_lossless(tmp_path):
    for cfg in (preset("brownian"), preset("stable"), preset("spectrally-negative"),
                ExperimentConfig(BranchingMechanism(drift=0.2, gaussian=0.5, jumps=ExponentialTail(1.0, 2.0)),
                                 EnvironmentSpec.centered(0.5, TwoSidedExponential(1.0, 3.0, 0.5, 2.0),
                                                          branching_drift=0.2),
                                 pathsim={"t": 2.0, "replicas": 10})):
        back = ExperimentConfig.load(write(tmp_path, cfg))
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()


def test_config_hash_is_stable_and_ignores_output_dir():
    a = preset("brownian")
    assert a.config_hash() == preset("brownian").config_hash()
    assert a.with_overrides(out="elsewhere").config_hash() == a.config_hash()
    assert a.with_overrides(seed=1).config_hash() != a.config_hash()
    assert len(a.config_hash()) == 64


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="t_grid"):
        small_config(t_grid=())
    with pytest.raises(ConfigError, match="t_grid"):
        small_config(t_grid=(2.0, 1.0))
    with pytest.raises(ConfigError, match="estimator"):
        small_config(estimator="magic")
    with pytest.raises(ConfigError, match="line"):
        ExperimentConfig.from_toml("[experiment\nz = 1")
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_toml(small_config().to_toml() + "\n[extra]\na = 1\n")
    with pytest.raises(ConfigError, match="mechanism"):
        ExperimentConfig.from_dict({"environment": {}})


def test_empty_t_grid_from_cli(tmp_path):
    text = small_config().to_toml().replace("t_grid = [", "t_grid = [] #")
    path = tmp_path / "bad.toml"
    path.write_text(text.replace("#\n", "\n", 1))
    assert main(["survival", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_grey_failure_is_a_hypothesis_error(tmp_path, capsys):
    cfg = ExperimentConfig(BranchingMechanism(), EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0),
                           t_grid=SMALL_GRID, n_paths=10)
    with pytest.raises(HypothesisError) as err:
        require_hypotheses(cfg)
    assert "Grey" in str(err.value) and "H4" in str(err.value)
    assert main(["survival", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert "Grey" in capsys.readouterr().err


def test_survival_outputs_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, small_config())
    assert main(["survival", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["survival", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "survival.csv").read_bytes()
    assert a == (tmp_path / "b" / "survival.csv").read_bytes()
    assert (tmp_path / "a" / "fit.json").read_bytes() == (tmp_path / "b" / "fit.json").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == "t,estimate,stderr,n"
    assert len(lines) == 1 + len(SMALL_GRID)
    fit = json.loads((tmp_path / "a" / "fit.json").read_text())
    assert set(fit) == {"slope", "slope_stderr", "intercept", "correction"}
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 17 and len(man["config_hash"]) == 64
    assert {"numpy", "scipy", "python", "levycsbp"} <= set(man["versions"])
    assert man["environment_metadata"]["outside_hypotheses"] is False


def test_headline_grid_gives_eight_rows(tmp_path):
    out = tmp_path / "h"
    code = main(["survival", "--paper-example", "brownian", "--n-paths", "200", "--out", str(out)])
    assert code in (0, 1)  # the fit may be ill-conditioned at this tiny n, the CSV is still written
    assert len((out / "survival.csv").read_text().splitlines()) == 9


def test_fit_subcommand_refits_a_csv(tmp_path, capsys):
    cfg = write(tmp_path, small_config())
    main(["survival", "--config", cfg, "--out", str(tmp_path / "a")])
    first = json.loads((tmp_path / "a" / "fit.json").read_text())
    capsys.readouterr()
    assert main(["fit", "--config", cfg, "--input", str(tmp_path / "a" / "survival.csv"),
                 "--out", str(tmp_path / "f")]) == 0
    again = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert again["slope"] == pytest.approx(first["slope"], rel=1e-9)
    assert again["slope_stderr"] == pytest.approx(first["slope_stderr"], rel=1e-6)


def test_renewal_subcommand(tmp_path, capsys):
    assert main(["renewal", "--paper-example", "brownian", "--out", str(tmp_path), "--x-max", "2",
                 "--points", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "x,V"
    assert [tuple(map(float, r.split(","))) for r in out[1:]] == [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]
    assert main(["renewal", "--paper-example", "spectrally-negative", "--out", str(tmp_path),
                 "--x-max", "2", "--points", "3"]) == 0
    assert "stable limit" in capsys.readouterr().err


def test_conditioned_subcommand(tmp_path, capsys):
    cfg = small_config(conditioned={"t": 1.0, "s_grid": [1.0, 2.0], "n_paths": 1000, "dt": 0.02})
    assert main(["conditioned", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "s,hard_estimate,weighted_estimate,stderr"
    assert len(rows) == 3


def test_pathsim_subcommand(tmp_path, capsys):
    cfg = small_config(pathsim={"t": 10.0, "n_env": 2, "replicas": 300, "dt": 0.01})
    assert main(["pathsim", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "path,pathwise,stderr,quenched,clip_rate"
    for r in rows[1:]:
        _, p, se, q, _ = map(float, r.split(","))
        assert abs(p - q) <= 4 * se + 0.02


def test_validation_suite_default_config_passes():
    results = run_validation_suite(preset("brownian"), n_paths=2000)
    names = {r.name for r in results}
    assert names == {"martingale", "majP_bound", "decomposition_identity", "h_weight_normalization",
                     "ode_oracle", "laplace_consistency"}
    assert all(r.passed for r in results), [(r.name, r.detail) for r in results if not r.passed]
    assert not any(r.flagged for r in results)


def test_validation_without_bridge_is_flagged():
    results = run_validation_suite(preset("brownian").with_overrides(bridge=False), n_paths=1000)
    flagged = {r.name: r.bias for r in results if r.flagged}
    assert set(flagged) == {"majP_bound", "h_weight_normalization"}
    assert all("biased upward" in b for b in flagged.values())


def test_validate_subcommand_writes_report(tmp_path, capsys):
    assert main(["validate", "--paper-example", "brownian", "--n-paths", "1000", "--out",
                 str(tmp_path)]) == 0
    report = json.loads((tmp_path / "validation.json").read_text())
    assert report["passed"] is True


def test_conflicting_sources_rejected(tmp_path):
    assert main(["survival", "--config", write(tmp_path, small_config()), "--paper-example", "brownian",
                 "--out", str(tmp_path)]) == 2
