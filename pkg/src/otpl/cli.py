"""Command line: scenario generation, data collection, training, evaluation and plots.

Every command resolves its parameters from built-in defaults, then an optional
JSON config file (one section per command), then explicit flags. The resolved
parameters and the tool version are written into every artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .agents import AGENT_NAMES, make_policy
from .dataset import DEFAULT_SAMPLES, DatasetError, collect, histograms_csv, load, rebalance_terminal_fraction, save, stats
from .evaluation import read_report, report_csv, run_episode
from .highway_sim import EVAL_DENSITIES, ScenarioError, evaluation_scenarios, load_scenario, make_critical_scenario, save_scenario
from .td3_offline import TD3Hyperparams, TrainedAgent, ReplayBuffer, TrainingError, train_offline

log = logging.getLogger("otpl")

EXIT_OK, EXIT_ARGS, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "scenario_gen": {"densities": list(EVAL_DENSITIES), "per_density": 10, "seed": 0},
    "scenario_critical": {"kind": "cutin"},
    "collect": {"samples": DEFAULT_SAMPLES, "seed": 0, "terminal_fraction": None,
                "densities": list(EVAL_DENSITIES)},
    "train": {"seed": 0, "iters": 20_000, "checkpoint_every": 5000, "terminal_fraction": None,
              "log_every": 100, "hyper": {}},
    "eval": {"agent": "otpl", "seed": 0, "label": None},
    "plot": {},
}

HYPER_FLAGS = ("gamma", "tau", "lr", "batch", "d", "sigma", "c")
PATH_ARGS = ("out", "data", "checkpoint", "scenarios", "report")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    command: str
    params: dict
    version: str = __version__
    config_file: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"command": self.command, "params": self.params, "tool": "otpl", "version": self.version}
        if self.config_file:
            d["config_file"] = self.config_file
        if self.extra:
            d["paths"] = self.extra
        return d


def parse_densities(text):
    """``"10..80"`` (step 10), ``"10..80:5"`` or a comma list ``"10,20,50"``."""
    try:
        if ".." in text:
            span, _, step = text.partition(":")
            lo, hi = (int(x) for x in span.split(".."))
            step = int(step) if step else 10
            if step <= 0 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1, step))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid density list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="otpl", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default=".", help="base directory for all relative paths")
    p.add_argument("--config", help="JSON file with one section per command")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"otpl {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sc = sub.add_parser("scenario", help="write scenario files")
    scs = sc.add_subparsers(dest="scenario_command", parser_class=_Parser)
    gen = scs.add_parser("gen", help="random evaluation scenarios")
    gen.add_argument("--densities", type=parse_densities)
    gen.add_argument("--per-density", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True, help="output directory")
    crit = scs.add_parser("critical", help="hand-built stress scenario")
    crit.add_argument("--kind", choices=("cutin", "trapped"))
    crit.add_argument("--out", required=True, help="output file")

    col = sub.add_parser("collect", help="random-action transition dataset")
    col.add_argument("--samples", type=int)
    col.add_argument("--seed", type=int)
    col.add_argument("--terminal-fraction", type=float)
    col.add_argument("--densities", type=parse_densities)
    col.add_argument("--stats", help="also write a JSON summary here (CSV histograms next to it)")
    col.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="offline TD3 on a dataset file")
    tr.add_argument("--data", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--iters", type=int)
    tr.add_argument("--terminal-fraction", type=float, help="rebalance the data before training")
    tr.add_argument("--checkpoint-every", type=int)
    for name in HYPER_FLAGS:
        tr.add_argument(f"--{name}", type=int if name in ("batch", "d") else float)
    tr.add_argument("--out", required=True, help="checkpoint directory")

    ev = sub.add_parser("eval", help="roll an agent over scenario files")
    ev.add_argument("--agent", choices=AGENT_NAMES)
    ev.add_argument("--checkpoint", help="checkpoint directory or file (otpl agent)")
    ev.add_argument("--scenarios", required=True, help="scenario directory or single file")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--label", help="name written to the report's agent column")
    ev.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="aggregate reports into CSV and SVG charts")
    pl.add_argument("--report", action="append", required=True, help="report CSV (repeatable)")
    pl.add_argument("--out", required=True, help="output prefix")
    return p


def resolve(section: str, args, file_cfg: dict) -> dict:
    """Built-in defaults, then the config-file section, then explicit flags."""
    params = json.loads(json.dumps(DEFAULTS.get(section, {})))
    from_file = file_cfg.get(section, {})
    if not isinstance(from_file, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    unknown = set(from_file) - set(params)
    if unknown:
        raise ValidationError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    for k, v in from_file.items():
        if k == "hyper":
            params["hyper"].update(v)
        else:
            params[k] = v
    for k in list(params):
        flag = getattr(args, k, None)
        if flag is not None:
            params[k] = flag
    if section == "train":
        for name in HYPER_FLAGS:
            v = getattr(args, name, None)
            if v is not None:
                params["hyper"][name] = v
    return params


def _path(args, p):
    return p if os.path.isabs(p) else os.path.join(args.workdir, p)


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _sidecar(path, run: RunConfig):
    _write(path + ".run.json", json.dumps(run.to_dict(), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------- commands


def cmd_scenario_gen(args, params, run):
    if params["per_density"] < 1 or not params["densities"]:
        raise ValidationError("need at least one density and per-density >= 1")
    out = _path(args, args.out)
    os.makedirs(out, exist_ok=True)
    scenarios = evaluation_scenarios(params["densities"], params["per_density"], params["seed"])
    for sc in scenarios:
        save_scenario(sc, os.path.join(out, f"{sc.name}.json"), {"run": run.to_dict()})
    log.info("wrote %d scenarios to %s", len(scenarios), out)


def cmd_scenario_critical(args, params, run):
    sc = make_critical_scenario(params["kind"])
    path = _path(args, args.out)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_scenario(sc, path, {"run": run.to_dict()})


def cmd_collect(args, params, run):
    if params["samples"] < 1:
        raise ValidationError("--samples must be >= 1")
    p = params["terminal_fraction"]
    if p is not None and not 0.0 <= p <= 1.0:
        raise ValidationError("--terminal-fraction must lie in [0, 1]")

    def progress(n, episodes):
        if episodes % 500 == 0:
            log.info("collected %d transitions over %d episodes", n, episodes)

    data = collect(params["samples"], params["seed"], tuple(params["densities"]), progress=progress)
    if p is not None:
        rng = np.random.default_rng(np.random.SeedSequence(params["seed"]).spawn(2)[1])
        data = rebalance_terminal_fraction(data, p, rng)
    path = _path(args, args.out)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save(data, path, run.to_dict())
    if args.stats:
        summary = stats(data)
        summary["run"] = run.to_dict()
        spath = _path(args, args.stats)
        _write(spath, json.dumps(summary, indent=1, sort_keys=True) + "\n")
        _write(os.path.splitext(spath)[0] + "_histograms.csv", histograms_csv(summary))
    log.info("wrote %d transitions (terminal fraction %.3f) to %s", len(data), data.terminal_fraction, path)


def cmd_train(args, params, run):
    try:
        hyper = TD3Hyperparams(**params["hyper"])
    except TypeError as exc:
        raise ValidationError(f"bad hyperparameters: {exc}") from None
    if params["iters"] < 1 or params["checkpoint_every"] < 1:
        raise ValidationError("--iters and --checkpoint-every must be >= 1")
    run.params["hyper"] = hyper.to_dict()
    data = load(_path(args, args.data))
    p = params["terminal_fraction"]
    if p is not None:
        rng = np.random.default_rng(np.random.SeedSequence(params["seed"]).spawn(3)[2])
        data = rebalance_terminal_fraction(data, p, rng)
    buffer = ReplayBuffer(data.transitions)
    out = _path(args, args.out)
    os.makedirs(out, exist_ok=True)
    rows = ["iteration,critic_loss,actor_loss,y_mean"]
    every = int(params["log_every"])

    def progress(diag):
        j = diag["iteration"]
        if j % every == 0:
            crit = sum(diag["critic_loss"]) / len(diag["critic_loss"])
            rows.append(f"{j},{crit!r},{diag.get('actor_loss', math.nan)!r},{diag['y_mean']!r}")
            if j % (every * 50) == 0:
                log.info("iteration %d critic %.4f", j, crit)

    from .mdp_env import ActionBounds, RewardParams
    reward = RewardParams(**data.metadata["reward"]) if "reward" in data.metadata else None
    bounds = ActionBounds.from_dict(data.metadata["bounds"]) if "bounds" in data.metadata else None
    train_offline(buffer, hyper, params["seed"], params["iters"], checkpoint_dir=out,
                  checkpoint_every=params["checkpoint_every"], progress=progress, reward=reward,
                  bounds=bounds, run_info=run.to_dict())
    _write(os.path.join(out, "train_log.csv"), "\n".join(rows) + "\n")


def _scenario_files(path):
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.endswith(".json") and not f.endswith(".run.json"))
        if not files:
            raise ValidationError(f"no scenario files in {path}")
        return [os.path.join(path, f) for f in files]
    return [path]


def cmd_eval(args, params, run):
    agent = None
    if params["agent"] == "otpl":
        if not args.checkpoint:
            raise UsageError("--agent otpl needs --checkpoint")
        try:
            agent = TrainedAgent.load(_path(args, args.checkpoint))
        except (OSError, KeyError, ValueError) as exc:
            raise ValidationError(f"cannot load checkpoint: {exc}") from None
    policy = make_policy(params["agent"], agent, np.random.default_rng(params["seed"]))
    if params["label"]:
        policy.name = params["label"]
    results = []
    for f in _scenario_files(_path(args, args.scenarios)):
        sc = load_scenario(f)
        results.append(run_episode(sc, policy, seed=params["seed"]))
    results.sort(key=lambda r: r.scenario_id)
    out = _path(args, args.out)
    _write(out, report_csv(results))
    _sidecar(out, run)
    done = sum(r.completed for r in results)
    log.info("%s: %d/%d completed", policy.name, done, len(results))


def cmd_plot(args, params, run):
    from .plotting import agent_totals, aggregate, aggregate_csv, terminal_chart, velocity_chart

    rows = []
    for rp in args.report:
        try:
            rows += read_report(_path(args, rp))
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"{rp}: malformed report ({exc})") from None
    if not rows:
        raise ValidationError("reports hold no rows")
    prefix = _path(args, args.out)
    agg, totals = aggregate(rows), agent_totals(rows)
    _write(prefix + "_by_density.csv", aggregate_csv(agg))
    _write(prefix + "_by_agent.csv", aggregate_csv(totals))
    os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
    desc = json.dumps(run.to_dict(), sort_keys=True)
    velocity_chart(agg, prefix + "_velocity.svg", desc)
    terminal_chart(totals, prefix + "_terminal.svg", desc)
    _sidecar(prefix, run)


COMMANDS = {
    "scenario_gen": cmd_scenario_gen,
    "scenario_critical": cmd_scenario_critical,
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
}

RUNTIME_ERRORS = (TrainingError, FloatingPointError, MemoryError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required")
        section = args.command
        if args.command == "scenario":
            if args.scenario_command is None:
                parser.error("scenario needs 'gen' or 'critical'")
            section = f"scenario_{args.scenario_command}"
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        file_cfg = {}
        if args.config:
            with open(_path(args, args.config)) as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise ValidationError("config file must hold a JSON object")
        params = resolve(section, args, file_cfg)
        paths = {k: getattr(args, k) for k in PATH_ARGS if getattr(args, k, None) is not None}
        run = RunConfig(section, params, config_file=args.config, extra=paths)
        COMMANDS[section](args, params, run)
    except UsageError as exc:
        print(f"otpl: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except ScenarioError as exc:
        # unplaceable scenarios surface while generating; bad files while loading
        code = EXIT_RUNTIME if section == "scenario_gen" else EXIT_VALIDATION
        print(f"otpl: {exc}", file=sys.stderr)
        return code
    except (ValidationError, DatasetError, json.JSONDecodeError) as exc:
        print(f"otpl: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"otpl: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RUNTIME_ERRORS as exc:
        print(f"otpl: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"otpl: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
