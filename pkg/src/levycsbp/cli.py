"""Command-line runner: ``levycsbp {survival,fit,renewal,conditioned,pathsim,validate}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .conditioned import convergence_check
from .config import PRESETS, ExperimentConfig, preset
from .environment import sample_path
from .errors import ConfigError, HypothesisError, IllConditionedFitError, LevyCSBPError
from .fluctuation import BrownianFamily, SpectrallyNegativeFamily, family_for
from .montecarlo import SurvivalEstimate, fit_exponent
from .pathsim import simulate_batch
from .quenched import quenched_survival
from .report import (HYPOTHESES, emit_report, fit_json, renewal_family, run_survival_experiment,
                     run_validation_suite, validation_json, write_csv)
from .rng import BRANCHING, stream


def _load(args) -> ExperimentConfig:
    if args.config and args.paper_example:
        raise ConfigError("give either --config or --paper-example, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.paper_example:
        cfg = preset(args.paper_example)
    else:
        cfg = preset("brownian")
    return cfg.with_overrides(seed=args.seed, out=args.out, n_paths=args.n_paths,
                              bridge=False if args.no_bridge else None)


def _dump_paths(cfg: ExperimentConfig, out: Path, count: int) -> None:
    for i in range(count):
        path = sample_path(cfg.environment, max(cfg.t_grid), cfg.dt, rng=stream(cfg.seed, i))
        with open(out / f"path_{i}.csv", "w", newline="") as fh:
            path.to_csv(fh, cfg.bridge)


def cmd_survival(args, cfg) -> int:
    result = run_survival_experiment(cfg, args.override_hypothesis, args.workers)
    files = emit_report(result, cfg.out)
    if args.debug_paths:
        _dump_paths(cfg, Path(cfg.out), args.debug_paths)
    print(Path(files["survival"]).read_text(), end="")
    if result.fit is not None:
        print(fit_json(result.fit), end="")
        return 0
    print(f"fit failed: {result.fit_error}", file=sys.stderr)
    return 1


def cmd_fit(args, cfg) -> int:
    if args.input:
        with open(args.input, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ests = []
        for r in rows:
            n, est, se = int(r["n"]), float(r["estimate"]), float(r["stderr"])
            # rebuild an accumulator with the same mean and standard error
            var = se * se * n
            total_sq = var * (n - 1) + n * est * est
            ests.append(SurvivalEstimate(float(r["t"]), cfg.z, n, est * n, total_sq))
        fit = fit_exponent(ests, args.correction or cfg.correction)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / "fit.json").write_text(fit_json(fit))
        print(fit_json(fit), end="")
        return 0
    return cmd_survival(args, cfg)


def cmd_renewal(args, cfg) -> int:
    fam, note = renewal_family(cfg)
    xs = np.linspace(0.0, args.x_max, args.points)
    if isinstance(fam, SpectrallyNegativeFamily):
        V = fam.renewal([float(x) for x in xs])
    else:
        V = fam.renewal()
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    rows = [(float(x), float(V(float(x)))) for x in xs]
    write_csv(Path(cfg.out) / "renewal.csv", ["x", "V"], rows)
    if note:
        print(f"# {note}; {V.note}", file=sys.stderr)
    print("x,V")
    for x, v in rows:
        print(f"{x!r},{v!r}")
    return 0


def cmd_conditioned(args, cfg) -> int:
    c = {"t": 1.0, "s_grid": [1.0, 2.0, 5.0, 10.0, 20.0], "n_paths": 10_000, "dt": 0.01}
    c.update(cfg.conditioned)
    V = family_for(cfg.environment).renewal()
    x = cfg.x
    F = lambda p: float(p.values[-1] > x)
    rows = convergence_check(F, x, V, cfg.environment, c["t"], c["s_grid"], int(c["n_paths"]),
                             cfg.seed, c["dt"], cfg.bridge)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    write_csv(Path(cfg.out) / "conditioned.csv", ["s", "hard_estimate", "weighted_estimate", "stderr"],
              [(r.s, r.hard, r.weighted, r.gap_stderr) for r in rows])
    print(Path(cfg.out, "conditioned.csv").read_text(), end="")
    last = rows[-1]
    return 0 if last.ok else 1


def cmd_pathsim(args, cfg) -> int:
    c = {"t": 10.0, "n_env": 20, "replicas": 500, "dt": 0.01}
    c.update(cfg.pathsim)
    m, env = cfg.mechanism, cfg.environment
    rows, ok = [], True
    for i in range(int(c["n_env"])):
        path = sample_path(env, c["t"], c["dt"], rng=stream(cfg.seed, i))
        batch = simulate_batch(m, path, cfg.z, c["dt"], stream(cfg.seed, i, BRANCHING), int(c["replicas"]))
        p = float(np.mean(batch.survived))
        se = math.sqrt(max(p * (1 - p), 1e-12) / len(batch.final))
        q = quenched_survival(m, path, cfg.z)
        rows.append((i, p, se, q, batch.clip_rate))
        ok &= batch.clip_ok and not batch.overflow
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    write_csv(Path(cfg.out) / "pathsim.csv", ["path", "pathwise", "stderr", "quenched", "clip_rate"], rows)
    print(Path(cfg.out, "pathsim.csv").read_text(), end="")
    return 0 if ok else 1


def cmd_validate(args, cfg) -> int:
    results = run_validation_suite(cfg)
    text = validation_json(results)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "validation.json").write_text(text)
    print(text, end="")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"survival": cmd_survival, "fit": cmd_fit, "renewal": cmd_renewal,
            "conditioned": cmd_conditioned, "pathsim": cmd_pathsim, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--paper-example", choices=PRESETS, help="built-in example configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output directory")
    common.add_argument("--n-paths", type=int)
    common.add_argument("--no-bridge", action="store_true", help="use the grid infimum")
    common.add_argument("--override-hypothesis", action="append", default=[], choices=HYPOTHESES,
                        help="run even if this hypothesis check fails (repeatable)")
    p = argparse.ArgumentParser(prog="levycsbp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("survival", parents=[common], help="annealed survival curve and exponent fit")
    s.add_argument("--debug-paths", type=int, default=0, help="dump this many environment paths")
    f = sub.add_parser("fit", parents=[common], help="fit the exponent of a survival CSV")
    f.add_argument("--input", help="survival.csv to fit (runs the experiment if absent)")
    f.add_argument("--correction", choices=("none", "explicit-ell"))
    f.add_argument("--debug-paths", type=int, default=0)
    r = sub.add_parser("renewal", parents=[common], help="print (x, V(x)) for the environment")
    r.add_argument("--x-max", type=float, default=10.0)
    r.add_argument("--points", type=int, default=21)
    for name in ("conditioned", "pathsim", "validate"):
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except HypothesisError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, IllConditionedFitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LevyCSBPError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
