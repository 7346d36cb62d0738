"""Command-line harness: experiments, solver reports and verification suites.

    oir experiment CONFIG [key=value ...]
    oir solve ENV --kappa 0.5,1,2
    oir check SUITE --seed N

Outputs go under ``$OIR_OUTPUT_ROOT`` (default ``./runs``).  Exit codes:
0 success, 1 configuration error, 2 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .envs import make_env
from .errors import ConfigError, OIRError
from .learn import (
    ALGORITHMS,
    DENSITY_MODES,
    EpisodeRecord,
    LearnerState,
    RunLog,
    exact_projected_gd,
    train,
)
from .mdp import SoftmaxPolicy, occupancy_stats
from .solve import kappa_sweep, lp_optimum, solve_oir
from .verify import SUITES

log = logging.getLogger("oir")

OUTPUT_ROOT_ENV = "OIR_OUTPUT_ROOT"
CSV_HEADER = ("episode", "emp_cost", "emp_entropy", "emp_oir", "ema_cost", "ema_entropy")
SUMMARY_METRICS = ("emp_cost", "emp_entropy", "emp_oir")
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    env: str
    algorithm: str
    kappa: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0
    tau: float = 0.1
    K: int = 200
    episodes: int = 1000
    seeds: tuple = (0,)
    density_mode: str = "empirical"
    projection_bound: float | None = 50.0
    init: str = "zeros"
    output: str = "experiment"
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS + ("exact_pgd",):
            raise ConfigError("algorithm", f"unknown algorithm {self.algorithm!r}")
        for name in ("alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "step sizes must be positive")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau", "must lie in (0, 1]")
        if self.kappa < 0:
            raise ConfigError("kappa", "must be nonnegative")
        if self.K < 1:
            raise ConfigError("K", "must be at least 1")
        if self.episodes < 1:
            raise ConfigError("episodes", "must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "seeds must be distinct")
        if self.density_mode not in DENSITY_MODES:
            raise ConfigError("density_mode", f"must be one of {DENSITY_MODES}")
        if self.projection_bound is not None and not self.projection_bound > 0:
            raise ConfigError("projection_bound", "must be positive or 'none'")
        if self.init not in ("zeros", "random"):
            raise ConfigError("init", "must be 'zeros' or 'random'")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")


def _parse_seeds(text: str) -> tuple:
    seeds = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return tuple(seeds)


def _convert(name: str, raw: str):
    raw = raw.strip()
    try:
        if name == "seeds":
            return _parse_seeds(raw)
        if name == "projection_bound":
            return None if raw.lower() in ("none", "off", "") else float(raw)
        if name in ("K", "episodes", "workers"):
            return int(raw)
        if name in ("kappa", "alpha", "beta", "tau"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(name, f"cannot parse {raw!r}: {exc}") from None
    return raw


def parse_config(text: str, overrides=()) -> RunConfig:
    """Flat ``key = value`` lines (``#`` starts a comment) plus ``key=value`` overrides."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    lines = [(i + 1, line) for i, line in enumerate(text.splitlines())]
    lines += [(f"override {o!r}", o) for o in overrides]
    for where, line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {where}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "eta":
            key = "alpha"
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _convert(key, raw)
    for required in ("env", "algorithm"):
        if required not in values:
            raise ConfigError(required, "missing required key")
    return RunConfig(**values)


def load_config(path, overrides=()) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, overrides)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# --- experiments -----------------------------------------------------------------


def _initial_theta(config: RunConfig, mdp, seed):
    if config.init == "zeros":
        return np.zeros(mdp.n_params)
    return np.random.default_rng([seed, 1]).normal(0.0, 1.0, mdp.n_params)


def run_seed(config: RunConfig, seed: int) -> RunLog:
    env = make_env(config.env)
    mdp = env.mdp
    theta0 = _initial_theta(config, mdp, seed)
    if config.algorithm == "exact_pgd":
        return _exact_pgd_log(config, mdp, theta0, seed)
    state = LearnerState.initial(
        mdp,
        step_actor=config.alpha,
        step_critic=config.beta,
        step_ema=config.tau,
        kappa=config.kappa,
        projection_bound=config.projection_bound,
        theta=theta0,
    )
    _, run_log = train(config.algorithm, env, state, config.K, config.episodes, seed, config.density_mode)
    return run_log


def _exact_pgd_log(config, mdp, theta0, seed) -> RunLog:
    """Exact scheme: per-iteration model values fill the empirical and EMA columns."""
    run = exact_projected_gd(mdp, config.kappa, theta0, config.alpha, config.episodes, config.projection_bound)
    out = RunLog(seed=seed)
    for t, theta in enumerate(run.thetas[1:], start=1):
        st = occupancy_stats(mdp, SoftmaxPolicy.from_theta(theta, mdp.n_states, mdp.n_actions), config.kappa)
        out.append(EpisodeRecord(t, st.avg_cost, st.entropy_d, st.oir, st.avg_cost, st.entropy_d, float(np.linalg.norm(theta))))
    return out


def write_run_csv(path: Path, run_log: RunLog):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in run_log.records:
            writer.writerow([r.episode] + [f"{getattr(r, k):.9g}" for k in CSV_HEADER[1:]])


def confidence_halfwidth(samples, level: float = 0.95, axis: int = 0):
    """Student-t half-width of the mean along ``axis`` (nan for a single sample)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n < 2:
        return np.full(np.delete(samples.shape, axis), np.nan)
    sem = samples.std(axis=axis, ddof=1) / np.sqrt(n)
    return stats.t.ppf(0.5 + level / 2, n - 1) * sem


@dataclass(frozen=True)
class ExperimentResult:
    directory: Path
    csv_files: tuple
    summary_file: Path
    final: dict


def run_experiment(config: RunConfig, root: Path | None = None) -> ExperimentResult:
    """One CSV per seed plus ``summary.csv`` (mean and 95% t half-width per episode)."""
    directory = (output_root() if root is None else Path(root)) / config.output
    directory.mkdir(parents=True, exist_ok=True)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            logs = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        logs = [run_seed(config, seed) for seed in config.seeds]

    files = []
    for seed, run_log in zip(config.seeds, logs):
        path = directory / f"seed_{seed}.csv"
        write_run_csv(path, run_log)
        files.append(path)

    table = {m: np.array([lg.column(m) for lg in logs]) for m in SUMMARY_METRICS}
    means = {m: v.mean(axis=0) for m, v in table.items()}
    halves = {m: confidence_halfwidth(v) for m, v in table.items()}
    summary = directory / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "ci95")])
        for i, episode in enumerate(logs[0].column("episode")):
            row = [int(episode)]
            for m in SUMMARY_METRICS:
                row += [f"{means[m][i]:.9g}", f"{halves[m][i]:.9g}"]
            writer.writerow(row)
    final = {m: float(means[m][-1]) for m in SUMMARY_METRICS}
    final.update({f"{m}_ci95": float(halves[m][-1]) for m in SUMMARY_METRICS})
    meta = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()}, "final": final}
    (directory / "summary.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return ExperimentResult(directory, tuple(files), summary, final)


# --- solver ----------------------------------------------------------------------

STATIONARITY_WARNING = (
    "warning: this environment restarts every episode from a fixed start state; "
    "the solver assumes stationary occupancy, so its optimum need not match episodic learning"
)


def run_solver(env_name: str, kappas) -> dict:
    """Solve the OIR program for each kappa plus the LP optimum; returns a report dict."""
    env = make_env(env_name)
    mdp = env.mdp
    kappas = sorted(float(k) for k in kappas)
    lp = lp_optimum(mdp)
    report = {
        "env": mdp.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "lp_optimum": lp.objective,
        "warnings": [STATIONARITY_WARNING] if env.fixed_start else [],
    }
    if len(kappas) == 1:
        sol = solve_oir(mdp, kappas[0])
        report["solution"] = {
            "kappa": kappas[0],
            "rho_star": sol.objective,
            "avg_cost": sol.avg_cost,
            "entropy_d": sol.entropy_d,
            "duality_gap": sol.duality_gap,
            "iterations": sol.iterations,
            "d_star": sol.d_star.tolist(),
            "policy_star": sol.policy_star.tolist(),
        }
    else:
        report["sweep"] = [asdict(row) for row in kappa_sweep(mdp, kappas)]
    return report


def format_solver_report(report: dict) -> str:
    lines = [f"environment {report['env']} ({report['n_states']} states, {report['n_actions']} actions)"]
    lines += report["warnings"]
    lines.append(f"LP optimum J* = {report['lp_optimum']:.9g}")
    if "solution" in report:
        s = report["solution"]
        lines.append(f"kappa = {s['kappa']:g}")
        lines.append(f"rho*  = {s['rho_star']:.9g}")
        lines.append(f"J(lambda*) = {s['avg_cost']:.9g}   H(lambda*) = {s['entropy_d']:.9g}")
        lines.append(f"Frank-Wolfe gap {s['duality_gap']:.2e} after {s['iterations']} iterations")
        lines.append("d* = " + " ".join(f"{x:.6f}" for x in s["d_star"]))
        lines.append("pi*:")
        lines += ["  " + " ".join(f"{p:.6f}" for p in row) for row in s["policy_star"]]
    else:
        lines.append(f"{'kappa':>8} {'rho*':>14} {'J(lambda*)':>14} {'H(lambda*)':>14} {'gap':>10}")
        for row in report["sweep"]:
            lines.append(
                f"{row['kappa']:>8g} {row['oir']:>14.9g} {row['avg_cost']:>14.9g} "
                f"{row['entropy_d']:>14.9g} {row['duality_gap']:>10.2e}"
            )
    return "\n".join(lines)


# --- checks ----------------------------------------------------------------------


def run_checks(suite: str, seed: int = 0):
    if suite not in SUITES:
        raise ConfigError("suite", f"must be one of {sorted(SUITES)}")
    return SUITES[suite](seed)


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oir", description="Occupancy information ratio toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("experiment", help="run a learning experiment from a config file")
    exp.add_argument("config")
    exp.add_argument("overrides", nargs="*", help="key=value overrides")

    sol = sub.add_parser("solve", help="solve for the optimal OIR of an environment")
    sol.add_argument("env")
    sol.add_argument("--kappa", default="1.0", help="comma-separated kappa values")
    sol.add_argument("--json", action="store_true", help="print the report as JSON")

    chk = sub.add_parser("check", help="run a verification suite")
    chk.add_argument("suite", choices=sorted(SUITES))
    chk.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "experiment":
            result = run_experiment(load_config(args.config, args.overrides))
            print(f"wrote {len(result.csv_files)} run files and {result.summary_file}")
            for m in SUMMARY_METRICS:
                print(f"final {m}: {result.final[m]:.6g} +- {result.final[m + '_ci95']:.3g}")
            return EXIT_OK
        if args.command == "solve":
            try:
                kappas = [float(k) for k in args.kappa.split(",") if k.strip()]
            except ValueError:
                raise ConfigError("kappa", f"cannot parse {args.kappa!r}") from None
            if not kappas or min(kappas) < 0:
                raise ConfigError("kappa", "need one or more nonnegative values")
            report = run_solver(args.env, kappas)
            print(json.dumps(report, indent=2) if args.json else format_solver_report(report))
            return EXIT_OK
        reports = run_checks(args.suite, args.seed)
        for r in reports:
            print(r.row())
        passed = sum(r.passed for r in reports)
        print(f"{passed}/{len(reports)} passed")
        return EXIT_OK if passed == len(reports) else EXIT_CHECK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"configuration error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    except OIRError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
