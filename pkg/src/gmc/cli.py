"""Experiment runner: ``python3 -m gmc {run,validate,summarize}``.

Configs are INI-style ``key = value`` files.  Every key has a default, so an
empty file runs the full-size settings; values are Python literals (numbers,
tuples, booleans) or bare strings.  Sections:

``[experiment]``  track, condition, methods, seeds, dataset, data paths
``[bandit]``      :class:`gmc.bandit.BanditConfig` fields
``[signal]``      :class:`gmc.signals.SignalConfig` fields
``[synthetic]``   :class:`gmc.datasets.SyntheticSpec` fields
``[gridworld]``   size, max_steps, noise_std, reward_window
``[ppo]`` ``[icm]`` ``[gmc_rl]``  the RL configs in :mod:`gmc.rl_agents`

Exit codes: 0 ok, 2 bad usage or config, 3 unreadable data, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import dataclasses
import sys
import traceback
from pathlib import Path

from . import analysis
from .bandit import BanditConfig, run_bandit
from .bandit_env import ActionSpace, Mode, default_action_space
from .datasets import (ConsistencyError, FormatError, SyntheticSpec, generate_synthetic,
                       load_cifar10_bin, load_mnist_idx)
from .rl_agents import AGENTS, GmcRlConfig, IcmConfig, PpoConfig, RlRunConfig, train
from .signals import SignalConfig, SignalKind
from .tensor_nn import NonFiniteError

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

TRACK_CONDITIONS = {"bandit": ("curriculum", "noise"),
                    "gridworld": ("nonoise", "doornoise")}
GRID_FIELDS = ["condition", "rollout", "seed", "method", "steps",
               "mean_episodic_reward", "episodes", "intrinsic_mean"]
GRID_SUMMARY_FIELDS = ["condition", "method", "mean_final_reward", "ci95", "n"]


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    track: str = "bandit"
    condition: str = "noise"
    methods: tuple[str, ...] = ("gmc",)
    seeds: tuple[int, ...] = tuple(range(20))
    dataset: str = "synthetic"
    mnist_images: str = ""
    mnist_labels: str = ""
    cifar_batches: tuple[str, ...] = ()
    out: str = "results"
    bandit: dict = dataclasses.field(default_factory=dict)
    signal: dict = dataclasses.field(default_factory=dict)
    synthetic: dict = dataclasses.field(default_factory=dict)
    gridworld: dict = dataclasses.field(default_factory=dict)
    ppo: dict = dataclasses.field(default_factory=dict)
    icm: dict = dataclasses.field(default_factory=dict)
    gmc_rl: dict = dataclasses.field(default_factory=dict)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0..4"`` (inclusive), ``"3"`` or ``"1,5,7"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return tuple(range(lo, hi + 1))
        return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError as exc:
        raise ConfigError(f"bad seed spec {text!r}") from exc


def _value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _names(v) -> tuple[str, ...]:
    if isinstance(v, str):
        return tuple(t.strip() for t in v.split(",") if t.strip())
    return tuple(str(t) for t in v)


def load_config(path: str | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    nested = {f.name for f in dataclasses.fields(cfg) if f.type == "dict"}
    for section in parser.sections():
        items = {k: _value(v) for k, v in parser.items(section)}
        if section == "experiment":
            for k, v in items.items():
                if k in ("methods",):
                    v = _names(v)
                elif k == "seeds":
                    v = parse_seeds(v) if isinstance(v, str) else tuple(
                        [v] if isinstance(v, int) else v)
                elif k == "cifar_batches":
                    v = _names(v)
                elif k not in {f.name for f in dataclasses.fields(cfg)} or k in nested:
                    raise ConfigError(f"unknown key [experiment] {k}")
                setattr(cfg, k, v)
        elif section in nested:
            getattr(cfg, section).update(items)
        else:
            raise ConfigError(f"unknown section [{section}]")
    return cfg


def _build(cls, overrides: dict, section: str, **fixed):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    try:
        return cls(**{**overrides, **fixed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def bandit_config(cfg: ExperimentConfig, method: str, seed: int) -> BanditConfig:
    signal = _build(SignalConfig, cfg.signal, "signal")
    return _build(BanditConfig, cfg.bandit, "bandit", mode=cfg.condition,
                  method=method, seed=seed, signal=signal)


def rl_config(cfg: ExperimentConfig, agent: str, seed: int) -> RlRunConfig:
    grid = dict(cfg.gridworld)
    unknown = set(grid) - {"size", "max_steps", "noise_std", "reward_window"}
    if unknown:
        raise ConfigError(f"unknown key(s) in [gridworld]: {sorted(unknown)}")
    return _build(RlRunConfig, grid, "gridworld", agent=agent, seed=seed,
                  door_noise=cfg.condition == "doornoise",
                  ppo=_build(PpoConfig, cfg.ppo, "ppo"),
                  icm=_build(IcmConfig, cfg.icm, "icm"),
                  gmc=_build(GmcRlConfig, cfg.gmc_rl, "gmc_rl"))


def validate(cfg: ExperimentConfig) -> list[str]:
    """Return a list of problems; empty means the config is runnable."""
    problems = []
    if cfg.track not in TRACK_CONDITIONS:
        return [f"track must be one of {sorted(TRACK_CONDITIONS)}"]
    if cfg.condition not in TRACK_CONDITIONS[cfg.track]:
        problems.append(f"condition {cfg.condition!r} is not valid for track {cfg.track!r}")
    if not cfg.seeds:
        problems.append("no seeds given")
    if not cfg.methods:
        problems.append("no methods given")
    if problems:
        return problems
    for m in cfg.methods:
        try:
            if cfg.track == "bandit":
                bc = bandit_config(cfg, m, cfg.seeds[0])
                if bc.action_space is not None:
                    wanted = default_action_space(Mode(cfg.condition))
                    if ActionSpace(bc.action_space) is not wanted:
                        problems.append(f"{cfg.condition} needs the {wanted.value} action space")
                for b in (bc.gmc_beta0, bc.gmc_beta1):
                    if not 0.0 < b < 1.0:
                        problems.append(f"GMC decay {b} outside (0, 1)")
            else:
                if m not in AGENTS:
                    problems.append(f"unknown agent {m!r}; choose from {AGENTS}")
                    continue
                rl_config(cfg, m, cfg.seeds[0])
        except (ConfigError, ValueError) as exc:
            problems.append(str(exc))
    if cfg.track == "bandit":
        if cfg.dataset not in ("synthetic", "mnist", "cifar10"):
            problems.append(f"unknown dataset {cfg.dataset!r}")
        if cfg.dataset == "mnist":
            for p in (cfg.mnist_images, cfg.mnist_labels):
                if not p or not Path(p).exists():
                    problems.append(f"MNIST file not found: {p!r}")
        if cfg.dataset == "cifar10":
            if not cfg.cifar_batches:
                problems.append("cifar_batches is empty")
            for p in cfg.cifar_batches:
                if not Path(p).exists():
                    problems.append(f"CIFAR-10 batch not found: {p!r}")
        try:
            _build(SyntheticSpec, cfg.synthetic, "synthetic")
        except ConfigError as exc:
            problems.append(str(exc))
    return list(dict.fromkeys(problems))


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "mnist":
        return load_mnist_idx(cfg.mnist_images, cfg.mnist_labels)
    if cfg.dataset == "cifar10":
        return load_cifar10_bin(cfg.cifar_batches)
    return generate_synthetic(_build(SyntheticSpec, cfg.synthetic, "synthetic"))


def run_experiment(cfg: ExperimentConfig, log=print) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.track == "bandit":
        data = load_data(cfg)
        runs = []
        for method in cfg.methods:
            for seed in cfg.seeds:
                run = run_bandit(bandit_config(cfg, method, seed), data)
                analysis.write_csv(out / "runs" / f"{cfg.condition}_{run.method}_{seed}.csv",
                                   analysis.BANDIT_FIELDS, analysis.bandit_rows(run))
                log(f"{cfg.condition} {run.method} seed {seed}: auc {run.auc():.4f}")
                runs.append(run)
        write_bandit_outputs(runs, out)
    else:
        results = []
        for agent in cfg.methods:
            for seed in cfg.seeds:
                res = train(rl_config(cfg, agent, seed))
                rows = [{**{k: r[k] for k in GRID_FIELDS if k in r}, "condition": cfg.condition}
                        for r in res.rows]
                analysis.write_csv(out / "runs" / f"{cfg.condition}_{agent}_{seed}.csv",
                                   GRID_FIELDS, rows)
                log(f"{cfg.condition} {agent} seed {seed}: final reward {res.final_reward():.4f}")
                results.append((cfg.condition, res, rows))
        write_grid_outputs(results, out)
    return out


def write_bandit_outputs(runs, out: Path) -> None:
    rows = [r for run in runs for r in analysis.bandit_rows(run)]
    analysis.write_csv(out / "metrics.csv", analysis.BANDIT_FIELDS, rows)
    summary = analysis.summarize(runs)
    analysis.write_csv(out / "summary.csv", analysis.SUMMARY_FIELDS, summary)
    if any(r.method == "uniform" for r in summary):
        conds = {r.condition for r in summary if r.method == "uniform"}
        normed = analysis.normalize_by_uniform([r for r in summary if r.condition in conds])
        analysis.write_csv(out / "summary_normalized.csv", analysis.SUMMARY_FIELDS, normed)
    analysis.write_csv(out / "ttest.csv", analysis.TTEST_FIELDS, analysis.pairwise_tests(runs))


def write_grid_outputs(results, out: Path) -> None:
    analysis.write_csv(out / "metrics.csv", GRID_FIELDS,
                       [r for _, _, rows in results for r in rows])
    finals: dict[tuple[str, str], list[float]] = {}
    for cond, res, _ in results:
        finals.setdefault((cond, res.agent), []).append(res.final_reward())
    summary = []
    for (cond, agent), vals in sorted(finals.items()):
        if len(vals) >= 2:
            mean, half = analysis.confidence_interval(vals)
        else:
            mean, half = vals[0], float("nan")
        summary.append({"condition": cond, "method": agent, "mean_final_reward": repr(float(mean)),
                        "ci95": repr(float(half)), "n": len(vals)})
    analysis.write_csv(out / "summary.csv", GRID_SUMMARY_FIELDS, summary)


def summarize_dir(path: Path, log=print) -> None:
    """Recompute summary and t-test CSVs from a bandit metrics.csv."""
    runs = analysis.read_bandit_csv(path / "metrics.csv")
    write_bandit_outputs(runs, path)
    for row in analysis.read_summary_csv(path / "summary.csv"):
        log(f"{row.condition:<11} {row.method:<11} auc {row.mean_auc:10.4f} "
            f"+/- {row.ci95:.4f} (n={row.n})")
    for row in analysis.read_ttest_csv(path / "ttest.csv"):
        log(f"{row.condition:<11} gmc vs {row.baseline:<11} t {row.t_stat:8.3f} p {row.p_value:.3g}")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seeds", help="A..B inclusive, or a comma list")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--method", help="signal or agent name(s), comma separated")
        sp.add_argument("--condition", help="curriculum, noise, nonoise or doornoise")
        sp.add_argument("--track", choices=sorted(TRACK_CONDITIONS))
    sp = sub.add_parser("summarize")
    sp.add_argument("--out", required=True, help="directory holding metrics.csv")
    return p


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.track:
        cfg.track = args.track
        if args.condition is None and cfg.condition not in TRACK_CONDITIONS[cfg.track]:
            cfg.condition = TRACK_CONDITIONS[cfg.track][0]
    if args.condition:
        cfg.condition = args.condition.lower()
    if args.method:
        cfg.methods = _names(args.method)
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    if args.out:
        cfg.out = args.out
    if cfg.track == "bandit":
        try:
            cfg.methods = tuple(SignalKind.parse(m).value for m in cfg.methods)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "summarize":
        path = Path(args.out)
        try:
            summarize_dir(path)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (KeyError, ValueError) as exc:
            print(f"error: malformed metrics.csv: {exc}", file=sys.stderr)
            return EXIT_DATA
        return 0
    try:
        cfg = load_config(args.config)
        if cfg.track not in TRACK_CONDITIONS:
            raise ConfigError(f"track must be one of {sorted(TRACK_CONDITIONS)}")
        cfg = _apply_flags(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    problems = validate(cfg)
    if args.command == "validate":
        for msg in problems:
            print(f"invalid: {msg}")
        if not problems:
            print("ok")
        return EXIT_USAGE if problems else 0
    if problems:
        for msg in problems:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run_experiment(cfg)
    except (FormatError, ConsistencyError, OSError) as exc:
        print(f"error: cannot read data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnostic.txt").write_text(traceback.format_exc())
        print(f"error: numerical abort: {exc} (see {out / 'diagnostic.txt'})", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0
