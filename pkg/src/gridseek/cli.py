"""Command-line surface.

Subcommands:
  gen      generate a synthetic task dataset
  train    train the search policy on a dataset
  eval     evaluate one method over budgets, writing a results CSV
  adapt    evaluate test-time adaptation modes on a (shifted) test stream
  trace    export one episode's trace, heatmap, and saliency maps
  compare  evaluate several methods and merge them into one table

Global flags: --config <path> (UTF-8 JSON or key=value file),
--set key=value (repeatable overrides), --seed <int>, --out <dir>.

Exit codes: 0 success, 1 usage/configuration error, 2 data/format error,
3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .baselines import GreedyNet, train_greedy_classifier, train_greedy_selection
from .dataio import read_dataset, write_dataset
from .errors import ConfigurationError, FormatError, GridseekError, NumericError
from .harness import (
    METHODS,
    ResultTable,
    evaluate,
    export_heatmap,
    export_saliency,
    sensitivity_trace,
    write_tta_report,
)
from .policy import PolicyConfig, VasPolicy
from .synth import SynthConfig, generate
from .task import BudgetSpec
from .train import TrainConfig, train, write_training_log
from .tta import MODES as TTA_MODES
from .tta import ReconHead, TtaConfig, TtaSession

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_BUDGETS = [12, 15, 18]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# -- config handling ----------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def load_config(path: str | None, overrides: list[str]) -> dict:
    """Read a JSON or key=value file, then apply key=value overrides."""
    cfg: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                cfg = json.loads(text)
            except json.JSONDecodeError as exc:
                raise UsageError(f"bad JSON in {path}: {exc}") from exc
        else:
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(
                        f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                cfg[key.strip()] = _parse_value(value.strip())
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = _parse_value(value.strip())
    return cfg


def _pick(cfg: dict, allowed) -> dict:
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return dict(cfg)


def _as_shape(value) -> tuple[int, int]:
    if isinstance(value, str):
        parts = value.lower().replace("x", ",").split(",")
        value = [int(p) for p in parts]
    rows, cols = value
    return int(rows), int(cols)


def _budget_spec(cfg: dict) -> BudgetSpec:
    mode = cfg.pop("budget_mode", "uniform-random")
    return BudgetSpec(mode=mode,
                      fixed_k=int(cfg.pop("fixed_k", 15)),
                      k_min=int(cfg.pop("k_min", 12)),
                      k_max=int(cfg.pop("k_max", 18)))


def _ensure_out(args) -> str:
    if args.out is None:
        raise UsageError("--out is required for this subcommand")
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.set)
    n_tasks = int(cfg.pop("n_tasks", 100))
    split = cfg.pop("split", "train")
    if "grid_shape" in cfg:
        cfg["grid_shape"] = _as_shape(cfg["grid_shape"])
    cfg.setdefault("seed", args.seed)
    synth_keys = SynthConfig.__dataclass_fields__.keys()
    try:
        synth = SynthConfig(**_pick(cfg, synth_keys))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synth config: {exc}") from exc
    out = _ensure_out(args)
    ds = generate(synth, n_tasks, split=split)
    write_dataset(ds, out)
    print(f"wrote {len(ds)} tasks to {out}")
    return EXIT_OK


def _policy_for_dataset(ds, cfg: dict, seed: int) -> VasPolicy:
    use_budget = bool(cfg.pop("use_budget_channel", True))
    pc = PolicyConfig.for_task_grid(ds.grid_shape, ds.feature_dim,
                                    use_budget_channel=use_budget)
    return VasPolicy(pc, np.random.default_rng(seed))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = read_dataset(args.data)
    out = _ensure_out(args)
    method = cfg.pop("method", "vas")
    budget_spec = _budget_spec(cfg)
    cfg.setdefault("seed", args.seed)
    train_keys = set(TrainConfig.__dataclass_fields__) - {"budget_spec"}
    if method in ("vas", "vas-no-rsb"):
        if method == "vas-no-rsb":
            cfg["use_budget_channel"] = False
        policy = _policy_for_dataset(ds, cfg, int(cfg.get("seed", args.seed)))
        tcfg = TrainConfig(budget_spec=budget_spec, **_pick(cfg, train_keys))
        recon = ReconHead(policy.config,
                          np.random.default_rng(tcfg.seed + 1)) \
            if tcfg.recon_weight > 0 else None
        log = train(policy, ds, tcfg, out_dir=out, recon_head=recon)
        policy.save(os.path.join(out, "policy.vasp"))
        if recon is not None:
            recon.save(os.path.join(out, "recon.vasp"))
    elif method in ("greedy-class", "greedy-select"):
        kind = "classification" if method == "greedy-class" else "selection"
        seed = int(cfg.pop("seed", args.seed))
        cfg["seed"] = seed
        pc = PolicyConfig.for_task_grid(ds.grid_shape, ds.feature_dim)
        net = GreedyNet(pc, kind, np.random.default_rng(seed))
        tcfg = TrainConfig(budget_spec=budget_spec, **_pick(cfg, train_keys))
        if kind == "classification":
            train_greedy_classifier(net, ds, tcfg)
        else:
            train_greedy_selection(net, ds, tcfg)
        net.save(os.path.join(out, "net.vasp"))
        log = []
    else:
        raise UsageError(f"cannot train method {method!r}")
    write_training_log(log, os.path.join(out, "training_log.csv"))
    print(f"trained {method} on {len(ds)} tasks -> {out}")
    return EXIT_OK


def _load_models(args):
    policy = VasPolicy.load(args.policy) if args.policy else None
    net = GreedyNet.load(args.net) if args.net else None
    recon = None
    if policy is not None:
        recon = ReconHead(policy.config)
        recon_path = args.recon or os.path.join(
            os.path.dirname(args.policy), "recon.vasp")
        if os.path.exists(recon_path):
            recon.load(recon_path)
    return policy, net, recon


def _budgets(cfg: dict, ds) -> list[int]:
    budgets = cfg.pop("budgets", DEFAULT_BUDGETS)
    if isinstance(budgets, (int, float)):
        budgets = [int(budgets)]
    budgets = [int(k) for k in budgets]
    n = ds.grid_shape[0] * ds.grid_shape[1]
    for k in budgets:
        if k < 1 or k > n:
            raise UsageError(f"budget {k} outside [1, {n}]")
    return budgets


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = read_dataset(args.data)
    out = _ensure_out(args)
    method = cfg.pop("method", args.method or "vas")
    budgets = _budgets(cfg, ds)
    tta_mode = cfg.pop("tta_mode", "none")
    tta_lr = float(cfg.pop("tta_learning_rate", 1e-5))
    if cfg:
        raise UsageError(f"unknown config keys: {sorted(cfg)}")
    policy, net, recon = _load_models(args)
    tta_cfg = TtaConfig(mode=tta_mode, tta_learning_rate=tta_lr) \
        if tta_mode != "none" else None
    table = evaluate(method, ds, budgets, policy=policy, net=net,
                     tta_cfg=tta_cfg, recon_head=recon, seed=args.seed)
    path = os.path.join(out, "results.csv")
    table.to_csv(path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = read_dataset(args.data)
    out = _ensure_out(args)
    modes = cfg.pop("tta_modes", list(TTA_MODES))
    if isinstance(modes, str):
        modes = [m.strip() for m in modes.split(",")]
    for m in modes:
        if m not in TTA_MODES:
            raise UsageError(f"unknown TTA mode {m!r}")
    budgets = _budgets(cfg, ds)
    tta_lr = float(cfg.pop("tta_learning_rate", 1e-5))
    stepwise_m = int(cfg.pop("stepwise_m", 5))
    if cfg:
        raise UsageError(f"unknown config keys: {sorted(cfg)}")
    if args.policy is None:
        raise UsageError("adapt needs --policy")
    policy, _, recon = _load_models(args)
    merged = ResultTable()
    report: dict[str, list] = {}
    for mode in modes:
        tta_cfg = TtaConfig(mode=mode, tta_learning_rate=tta_lr,
                            stepwise_m=stepwise_m)
        for k in budgets:
            rng = np.random.default_rng(args.seed + k)
            snapshot = policy.params.snapshot()
            session = TtaSession(policy, tta_cfg, recon)
            entries = []
            for task in ds:
                trace = session.run_task(task, min(k, task.n_cells), rng)
                entries.append((trace, session.n_updates_last))
            policy.params.restore(snapshot)
            report.setdefault(mode, []).extend(entries)
            traces = [t for t, _ in entries]
            from .harness import _aggregate
            n_cells = ds.grid_shape[0] * ds.grid_shape[1]
            merged.rows.append(_aggregate(f"vas+{mode}", n_cells, k, traces))
    merged.to_csv(os.path.join(out, "results.csv"))
    write_tta_report(report, budgets[0], os.path.join(out, "tta_report.csv"))
    print(f"wrote {os.path.join(out, 'results.csv')}")
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = read_dataset(args.data)
    out = _ensure_out(args)
    k = int(cfg.pop("k", 15))
    index = int(cfg.pop("task_index", 0))
    intervention = cfg.pop("intervention", "none")
    if cfg:
        raise UsageError(f"unknown config keys: {sorted(cfg)}")
    if args.policy is None:
        raise UsageError("trace needs --policy")
    if not 0 <= index < len(ds):
        raise UsageError(f"task_index {index} outside dataset of {len(ds)}")
    policy, _, _ = _load_models(args)
    task = ds.tasks[index]
    k = min(k, task.n_cells)
    trace = sensitivity_trace(policy, task, k, intervention)
    prefix = os.path.join(out, f"trace_{task.id}")
    with open(prefix + ".csv", "w", encoding="utf-8") as f:
        n = task.n_cells
        f.write("task,step,cell,outcome," +
                ",".join(f"p{j}" for j in range(n)) + "\n")
        for rec in trace.steps:
            probs = ",".join(repr(float(p)) for p in rec.distribution)
            f.write(f"{task.id},{rec.step},{rec.cell},{rec.observed},{probs}\n")
    export_heatmap(trace, policy, task, prefix)
    export_saliency(trace, policy, task, prefix)
    print(f"wrote {prefix}.csv (utility {trace.utility}, esr {trace.esr:.3f})")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set)
    ds = read_dataset(args.data)
    out = _ensure_out(args)
    budgets = _budgets(cfg, ds)
    methods = cfg.pop("methods", list(METHODS))
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",")]
    if cfg:
        raise UsageError(f"unknown config keys: {sorted(cfg)}")
    policy, net, recon = _load_models(args)
    no_rsb = VasPolicy.load(args.policy_no_rsb) if args.policy_no_rsb else None
    merged = ResultTable()
    # fixed column order for stable diffs
    for method in METHODS:
        if method not in methods:
            continue
        p = no_rsb if method == "vas-no-rsb" else policy
        table = evaluate(method, ds, budgets, policy=p, net=net,
                         seed=args.seed)
        merged.rows.extend(table.rows)
    path = os.path.join(out, "results.csv")
    merged.to_csv(path)
    print(f"wrote {path}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="gridseek", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")
    for name, fn, needs_data in [
        ("gen", cmd_gen, False),
        ("train", cmd_train, True),
        ("eval", cmd_eval, True),
        ("adapt", cmd_adapt, True),
        ("trace", cmd_trace, True),
        ("compare", cmd_compare, True),
    ]:
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None,
                       help="JSON or key=value config file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="config override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        if needs_data:
            p.add_argument("--data", required=True, help="dataset directory")
        if name in ("eval", "adapt", "trace", "compare"):
            p.add_argument("--policy", default=None,
                           help="trained policy checkpoint (.vasp)")
            p.add_argument("--net", default=None,
                           help="trained baseline net checkpoint (.vasp)")
            p.add_argument("--recon", default=None,
                           help="reconstruction head checkpoint (.vasp)")
        if name == "eval":
            p.add_argument("--method", default=None, choices=METHODS)
        if name == "compare":
            p.add_argument("--policy-no-rsb", default=None,
                           help="checkpoint of the no-budget-channel variant")
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        return args.fn(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GridseekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli())
