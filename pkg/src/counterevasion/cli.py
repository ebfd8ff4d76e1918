"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--config <json>`` and ``--out <dir>``.
Option values resolve as flag > config file > built-in default. Each run
writes a ``manifest.json`` next to its outputs; passing that manifest back
as ``--config`` replays the run.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .core import RNG_ALGORITHM, ConstraintSet, CoreError, Dataset, derive_rng, schema_to_json
from .datagen import (
    GeneratorParams,
    default_schema,
    dumps_csv,
    generate,
    load_csv,
    schema_from_json_file,
)
from .defense import DefenseConfig, build_ensemble
from .dtree import DecisionTree, TrainParams, train
from .evaluation import (
    ExperimentSpec,
    attack_chain,
    attack_stats,
    compute_metrics,
    evaluate,
    grid_cells,
    grid_csv,
    manipulation_frequency,
    prepare_rep,
    run_grid,
    split_dataset,
    sweep_cells,
    sweep_csv,
)
from .evasion import MANIPULATIONS, STRATEGIES, AttackConfig, adaptive_attack, outcomes_to_jsonl


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Option table
# ---------------------------------------------------------------------------


def _int(lo: int | None = None) -> Callable[[Any], int]:
    def conv(v):
        if isinstance(v, bool):
            raise ValueError("expected an integer")
        if isinstance(v, float):
            if not v.is_integer():
                raise ValueError("expected an integer")
            v = int(v)
        out = int(v)
        if lo is not None and out < lo:
            raise ValueError(f"must be >= {lo}")
        return out

    conv.__name__ = "integer"
    return conv


def _float(lo: float | None = None, hi: float | None = None, open_lo=False, open_hi=False):
    def conv(v):
        if isinstance(v, bool):
            raise ValueError("expected a number")
        out = float(v)
        if not np.isfinite(out):
            raise ValueError("must be finite")
        if lo is not None and (out < lo or (open_lo and out == lo)):
            raise ValueError(f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and (out > hi or (open_hi and out == hi)):
            raise ValueError(f"must be {'<' if open_hi else '<='} {hi}")
        return out

    conv.__name__ = "number"
    return conv


def _opt_int(lo: int):
    base = _int(lo)

    def conv(v):
        if v is None or (isinstance(v, str) and v.lower() in ("none", "null", "")):
            return None
        return base(v)

    conv.__name__ = "integer"
    return conv


def _choice(*choices: str):
    def conv(v):
        if v not in choices:
            raise ValueError(f"must be one of {', '.join(choices)}")
        return v

    conv.__name__ = "choice"
    return conv


def _list(item: Callable, universe: tuple | None = None):
    """Comma-separated string or JSON list; ``all`` expands to ``universe``."""

    def conv(v):
        if isinstance(v, str):
            if universe is not None and v == "all":
                return list(universe)
            v = [p for p in v.split(",") if p.strip()]
        elif not isinstance(v, list):
            v = [v]
        if not v:
            raise ValueError("empty list")
        return [item(x.strip() if isinstance(x, str) else x) for x in v]

    conv.__name__ = "list"
    return conv


def _path(v):
    if v is None:
        return None
    if not isinstance(v, str):
        raise ValueError("expected a path")
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes"):
        return True
    if isinstance(v, str) and v.lower() in ("false", "0", "no"):
        return False
    raise ValueError("expected true or false")


@dataclass(frozen=True)
class Opt:
    name: str  # config key; the flag is --name with dashes
    conv: Callable
    default: Any
    help: str
    flag: bool = False  # store_true switch

    @property
    def flag_name(self) -> str:
        return "--" + self.name.replace("_", "-")


SEED = Opt("seed", _int(0), 0, "master seed")

GENERATOR = [
    Opt("n_malicious", _int(0), 838, "malicious vectors to generate"),
    Opt("n_benign", _opt_int(0), None, "benign vectors (default: ratio x n_malicious)"),
    Opt("ratio", _float(0), 4.0, "benign:malicious ratio when --n-benign is unset"),
    Opt("separation", _float(0), 1.0, "gap between benign and malicious campaign centers"),
    Opt("spread", _float(0, open_lo=True), 1.0, "multiplier on every standard deviation"),
    Opt("noise_fraction", _float(0, 1), 0.0, "share of features made label-independent"),
    Opt("n_campaigns", _int(1), 20, "malicious campaigns"),
    Opt("campaign_spread", _float(0, open_lo=True), 0.12, "within-campaign sd relative to benign sd"),
]
SOURCE = [
    Opt("data", _path, None, "dataset CSV (default: generate one)"),
    Opt("schema", _path, None, "schema JSON with constraints (default: built-in 16-feature schema)"),
]
TREE_PARAMS = [
    Opt("min_leaf_size", _int(1), 5, "minimum training vectors per leaf"),
    Opt("max_depth", _opt_int(0), None, "depth limit (default: unlimited)"),
]
SPLIT = Opt("train_fraction", _float(0, 1, True, True), 0.5, "training share of the stratified split")
REPS = Opt("reps", _int(1), 5, "repetitions averaged per result")
ONE_F = Opt("f", _choice(*MANIPULATIONS), "F1", "manipulation algorithm")
ONE_ST = Opt("st", _choice(*STRATEGIES), "parallel", "adaptation strategy")

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "gen-data": ("generate a labeled synthetic dataset", [SEED, *GENERATOR]),
    "train": (
        "train a detection tree on the training split",
        [SEED, *SOURCE, *GENERATOR, SPLIT, *TREE_PARAMS],
    ),
    "attack": (
        "run an adaptive attack against a trained tree",
        [
            SEED,
            Opt("tree", _path, None, "tree JSON to attack (required)"),
            Opt("data", _path, None, "dataset CSV whose malicious vectors are manipulated (required)"),
            Opt("schema", _path, None, "schema JSON with constraints (default: the tree's schema with built-in constraints)"),
            ONE_F,
            ONE_ST,
            Opt("alpha", _int(1), 1, "attack rounds"),
            *TREE_PARAMS,
        ],
    ),
    "defend": (
        "train a proactive ensemble",
        [
            SEED,
            Opt("tree", _path, None, "original detection tree JSON (required)"),
            Opt("data", _path, None, "defender's training CSV (required)"),
            Opt("schema", _path, None, "schema JSON with constraints (default: the tree's schema with built-in constraints)"),
            ONE_F,
            Opt("st", _choice(*STRATEGIES), "full", "adaptation strategy"),
            Opt("gamma", _int(0), 8, "proactive training rounds"),
            *TREE_PARAMS,
        ],
    ),
    "evaluate": (
        "train, attack, defend and score one scenario",
        [
            SEED,
            *SOURCE,
            Opt("defender_data", _path, None, "defender's proactive-training CSV (default: the training split)"),
            *GENERATOR,
            Opt("st_a", _choice(*STRATEGIES), "full", "attacker strategy"),
            Opt("st_d", _choice(*STRATEGIES), "full", "defender strategy"),
            Opt("f_a", _choice(*MANIPULATIONS), "F1", "attacker manipulation"),
            Opt("f_d", _choice(*MANIPULATIONS), "F1", "defender manipulation"),
            Opt("alpha", _int(0), 1, "attack rounds (0 disables the attack)"),
            Opt("gamma", _int(0), 8, "proactive training rounds"),
            REPS,
            SPLIT,
            *TREE_PARAMS,
        ],
    ),
    "grid": (
        "evaluate every combination of strategies, algorithms, alpha and gamma",
        [
            SEED,
            *SOURCE,
            Opt("defender_data", _path, None, "defender's proactive-training CSV (default: the training split)"),
            *GENERATOR,
            Opt("st_a", _list(_choice(*STRATEGIES), STRATEGIES), ["full"], "attacker strategies (list or all)"),
            Opt("st_d", _list(_choice(*STRATEGIES), STRATEGIES), ["full"], "defender strategies (list or all)"),
            Opt("f_a", _list(_choice(*MANIPULATIONS), MANIPULATIONS), ["F1"], "attacker algorithms (list or all)"),
            Opt("f_d", _list(_choice(*MANIPULATIONS), MANIPULATIONS), ["F1"], "defender algorithms (list or all)"),
            Opt("alpha", _list(_int(0)), [1], "attack rounds (comma list)"),
            Opt("gamma", _list(_int(0)), [8], "proactive rounds (comma list)"),
            Opt("sweep", _bool, False, "run the gamma-minus-alpha sweep instead (alpha 0..8, gamma 0..9)", flag=True),
            Opt("jobs", _int(1), 1, "worker processes (one repetition per task)"),
            REPS,
            SPLIT,
            *TREE_PARAMS,
        ],
    ),
    "rank-features": (
        "count manipulated features and rank features by information gain",
        [
            SEED,
            *SOURCE,
            *GENERATOR,
            Opt("f", _list(_choice(*MANIPULATIONS), MANIPULATIONS), ["F1"], "algorithms whose manipulations are counted"),
            Opt("top_k", _int(1), 5, "size of the top sets compared for overlap"),
            REPS,
            SPLIT,
            *TREE_PARAMS,
        ],
    ),
}

INPUT_KEYS = ("data", "schema", "tree", "defender_data")


# ---------------------------------------------------------------------------
# Parsing and config resolution
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="counterevasion", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON config file or a previous run's manifest")
        p.add_argument("--out", help="output directory (default: out)")
        for o in opts:
            default_text = "" if o.default is None else f" [default: {o.default}]"
            if o.flag:
                p.add_argument(o.flag_name, dest=o.name, action="store_const", const=True, help=o.help + default_text)
            else:
                p.add_argument(o.flag_name, dest=o.name, help=o.help + default_text)
    return parser


def _read_config(path: str, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    if "command" in doc and "config" in doc:  # a run manifest
        if doc["command"] != command:
            raise UsageError(f"manifest {path} records command {doc['command']!r}, not {command!r}")
        doc = doc["config"]
    return {k.replace("-", "_"): v for k, v in doc.items()}


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults, config file and flags into a validated config."""
    opts = {o.name: o for o in COMMANDS[command][1]}
    cfg_file = flags.pop("config", None)
    file_values = _read_config(cfg_file, command) if cfg_file else {}
    out_dir = flags.pop("out", None) or file_values.pop("out", None) or "out"
    unknown = sorted(set(file_values) - set(opts))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    resolved = {}
    for name, o in opts.items():
        if name in flags:
            raw, source = flags[name], f"{o.flag_name}"
        elif name in file_values:
            raw, source = file_values[name], f"config key {name!r}"
        else:
            resolved[name] = o.default
            continue
        try:
            resolved[name] = o.conv(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{source}: invalid value {raw!r} ({exc})") from None
    resolved["out"] = out_dir
    return resolved


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(cfg: dict, *keys: str):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _check_inputs(cfg: dict):
    for k in INPUT_KEYS:
        p = cfg.get(k)
        if p is not None and not Path(p).is_file():
            raise UsageError(f"--{k.replace('_', '-')}: file not found: {p}")


def _generator(cfg: dict) -> GeneratorParams:
    nb = cfg["n_benign"]
    if nb is None:
        nb = int(round(cfg["ratio"] * cfg["n_malicious"]))
    return GeneratorParams(
        n_malicious=cfg["n_malicious"],
        n_benign=nb,
        separation=cfg["separation"],
        spread=cfg["spread"],
        noise_fraction=cfg["noise_fraction"],
        n_campaigns=cfg["n_campaigns"],
        campaign_spread=cfg["campaign_spread"],
    )


def _train_params(cfg: dict) -> TrainParams:
    return TrainParams(min_leaf_size=cfg["min_leaf_size"], max_depth=cfg["max_depth"])


def _schema(cfg: dict, fallback=None):
    if cfg.get("schema"):
        return schema_from_json_file(cfg["schema"])
    if fallback is not None:
        base, constraints = default_schema()
        if fallback == base:
            return base, constraints
        return fallback, ConstraintSet(fallback)
    return default_schema()


def _load_tree(path: str) -> DecisionTree:
    try:
        return DecisionTree.from_json(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CoreError(f"cannot read tree {path}: {exc}") from None


def _spec(cfg: dict, **cells) -> ExperimentSpec:
    return ExperimentSpec(
        generator=_generator(cfg),
        data_csv=cfg.get("data"),
        schema_json=cfg.get("schema"),
        defender_csv=cfg.get("defender_data"),
        train_fraction=cfg["train_fraction"],
        seed=cfg["seed"],
        reps=cfg["reps"],
        train_params=_train_params(cfg),
        **cells,
    )


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Outputs:
    """Collects output files so the manifest can list them."""

    def __init__(self, out_dir: str):
        self.dir = Path(out_dir)
        self.names: list[str] = []

    def write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text, encoding="utf-8", newline="")
        self.names.append(name)


def _report_dict(r) -> dict | None:
    return None if r is None else r.to_dict()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: dict, out: Outputs) -> str:
    params = _generator(cfg)
    schema, constraints = default_schema()
    ds = generate(params, derive_rng(cfg["seed"], "gen-data"), schema)
    out.write("data.csv", dumps_csv(ds))
    out.write("schema.json", schema_to_json(schema, constraints) + "\n")
    out.write("generator.json", _json(params.to_dict()))
    return format_table(
        ["vectors", "malicious", "benign", "features"],
        [[len(ds), len(ds.malicious_idx), len(ds.benign_idx), len(schema)]],
    )


def _source(cfg: dict):
    schema, constraints = _schema(cfg)
    if cfg.get("data"):
        return load_csv(cfg["data"], schema), constraints
    return generate(_generator(cfg), derive_rng(cfg["seed"], "gen-data"), schema), constraints


def cmd_train(cfg: dict, out: Outputs) -> str:
    data, _ = _source(cfg)
    tr, te = split_dataset(data, derive_rng(cfg["seed"], "split"), cfg["train_fraction"])
    tree = train(tr, _train_params(cfg))
    reports = {
        "train": compute_metrics(tree.predict(tr), tr.y).to_dict(),
        "test": compute_metrics(tree.predict(te), te.y).to_dict(),
        "nodes": len(tree),
        "depth": tree.depth,
    }
    out.write("tree.json", tree.to_json() + "\n")
    out.write("report.json", _json(reports))
    rows = [[k, reports[k]["acc"], reports[k]["tp"], reports[k]["fn"], reports[k]["fp"]] for k in ("train", "test")]
    return format_table(["split", "acc", "tp", "fn", "fp"], rows) + f"\ntree: {len(tree)} nodes, depth {tree.depth}"


def cmd_attack(cfg: dict, out: Outputs) -> str:
    _require(cfg, "tree", "data")
    tree = _load_tree(cfg["tree"])
    schema, constraints = _schema(cfg, tree.schema)
    data = load_csv(cfg["data"], schema)
    acfg = AttackConfig(cfg["st"], cfg["f"], cfg["alpha"], constraints, _train_params(cfg), cfg["seed"])
    d_alpha, artifacts = adaptive_attack(tree, data, acfg)
    outcomes = artifacts.rounds[-1].outcomes
    report = attack_stats(outcomes, tree.predict(d_alpha), d_alpha.y)
    out.write("attacked.csv", dumps_csv(d_alpha))
    out.write("outcomes.jsonl", outcomes_to_jsonl(outcomes, schema))
    out.write("attack_report.json", _json(report.to_dict()))
    return format_table(
        ["f", "st", "alpha", "fn", "mf", "fa", "success", "failed", "skipped"],
        [[cfg["f"], cfg["st"], cfg["alpha"], report.fn_rate, report.mean_manipulated_features,
          report.failed_attempt_rate, report.n_success, report.n_failed, report.n_skipped]],
    )


def cmd_defend(cfg: dict, out: Outputs) -> str:
    _require(cfg, "tree", "data")
    tree = _load_tree(cfg["tree"])
    schema, constraints = _schema(cfg, tree.schema)
    data = load_csv(cfg["data"], schema)
    dcfg = DefenseConfig(cfg["st"], cfg["f"], cfg["gamma"], constraints, _train_params(cfg), cfg["seed"])
    ens = build_ensemble(tree, data, dcfg)
    out.write("ensemble.json", ens.to_json() + "\n")
    rows = [[f"M_{i}", len(t), t.depth] for i, t in enumerate((ens.m0, *ens.proactive))]
    return format_table(["tree", "nodes", "depth"], rows)


def cmd_evaluate(cfg: dict, out: Outputs) -> str:
    spec = _spec(cfg, st_a=cfg["st_a"], st_d=cfg["st_d"], f_a=cfg["f_a"], f_d=cfg["f_d"],
                 alpha=cfg["alpha"], gamma=cfg["gamma"])
    result = evaluate(spec)
    summary = result.summary()
    doc = {
        "summary": summary,
        "per_rep": [
            {"ensemble": r.ensemble.to_dict(), "static": r.static.to_dict(), "attack": _report_dict(r.attack)}
            for r in result.reps
        ],
    }
    out.write("evaluation.json", _json(doc))
    rows = [[name] + [summary[name][m] for m in ("acc", "tp", "fn", "fp")] for name in ("ensemble", "static")]
    text = format_table(["detector", "acc", "tp", "fn", "fp"], rows)
    a = summary["attack"]
    if cfg["alpha"] > 0:
        text += "\n\n" + format_table(
            ["attack fn", "mf", "fa"], [[a["fn_rate"], a["mean_manipulated_features"], a["failed_attempt_rate"]]]
        )
    return text


def cmd_grid(cfg: dict, out: Outputs) -> str:
    spec = _spec(cfg)
    if cfg["sweep"]:
        cells = sweep_cells()
    else:
        cells = grid_cells(cfg["st_a"], cfg["st_d"], cfg["f_a"], cfg["f_d"], cfg["alpha"], cfg["gamma"])
    result = run_grid(spec, cells, jobs=cfg["jobs"])
    out.write("grid.csv", grid_csv(result))
    out.write("grid.json", result.to_json() + "\n")
    if cfg["sweep"]:
        out.write("sweep.csv", sweep_csv(result))
    cols = ["st_a", "st_d", "f_a", "f_d", "alpha", "gamma", "acc", "tp", "fn", "fp"]
    rows = [[r[c] for c in cols] for r in result.rows()]
    failed = sum(1 for c in result.cells if result.errors(c))
    text = format_table(cols, rows)
    if failed:
        text += f"\n{failed} cell(s) had failing repetitions; see grid.json"
    return text


def cmd_rank_features(cfg: dict, out: Outputs) -> str:
    spec = _spec(cfg)
    streams = []
    data0 = None
    for rep in range(spec.reps):
        ctx = prepare_rep(spec, rep)
        if data0 is None:
            data0 = Dataset(
                ctx.train.schema,
                np.vstack([ctx.train.X, ctx.test.X]),
                np.concatenate([ctx.train.y, ctx.test.y]),
                list(ctx.train.ids) + list(ctx.test.ids),
            )
        for f in cfg["f"]:
            rounds = attack_chain(ctx, "parallel", f, 1)
            streams.append(rounds[0].outcomes)
    stats = manipulation_frequency(streams, data0, cfg["top_k"])
    out.write("features.json", stats.to_json() + "\n")
    rows = [
        [i + 1, m, stats.counts[m], g, stats.info_gain[g]]
        for i, (m, g) in enumerate(zip(stats.manipulation_rank, stats.info_gain_rank))
    ]
    text = format_table(["rank", "most manipulated", "count", "highest info gain", "gain"], rows)
    return text + f"\noverlap of top {stats.top_k}: {', '.join(stats.overlap) or 'none'}"


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "rank-features": cmd_rank_features,
}


def run(command: str, cfg: dict) -> str:
    """Execute ``command`` with a resolved config; returns the stdout table."""
    out = Outputs(cfg["out"])
    config = {k: v for k, v in cfg.items() if k != "out"}
    text = HANDLERS[command](config, out)
    manifest = {
        "command": command,
        "config": config,
        "seed": config["seed"],
        "rng": RNG_ALGORITHM,
        "inputs": {config[k]: _sha256(config[k]) for k in INPUT_KEYS if config.get(k)},
        "outputs": sorted(out.names),
        "version": __version__,
    }
    out.write("manifest.json", _json(manifest))
    return text


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        command = ns.pop("command")
        cfg = resolve(command, ns)
        _check_inputs(cfg)
    except UsageError as exc:
        print(f"counterevasion: usage error: {exc}", file=sys.stderr)
        return 1
    try:
        text = run(command, cfg)
    except UsageError as exc:
        print(f"counterevasion: usage error: {exc}", file=sys.stderr)
        return 1
    except (CoreError, ValueError, OSError) as exc:
        print(f"counterevasion: error: {exc}", file=sys.stderr)
        return 2
    print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
