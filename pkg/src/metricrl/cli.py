"""``metricrl`` command line: one verb per pipeline stage or experiment.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 training error.
Outputs go to ``--out`` (default ``$METRICRL_OUTPUT_ROOT/<verb>``, root
``runs``); an existing non-empty directory is only reused with ``--force``.
``METRICRL_THREADS`` sets the default number of parallel sweep jobs.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import harness, plotting
from .agent import (GreedyValuePolicy, OraclePolicy, PolicyModel, RandomPolicy, train_bc, train_dqn,
                    train_pg_actor, value_model_for_env)
from .config import SCHEMA, RunConfig, float_list, int_list, str_list
from .datagen import collect, dataset_env_spec, read_dataset, write_dataset
from .envs import EnvIndex, hypermaze_spec, make_env
from .errors import (ConfigError, DataError, DatasetIOError, MetricRLError, ResourceError,
                     TrainingError, UsageError)
from .metric import EmbeddingModel, MonotonicityReport, monotonicity_violation_rate, train
from .oracle import add_meta_state, build_graph
from .tensor import RNG_ALGORITHM, atomic_write_text, make_rng

log = logging.getLogger("metricrl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3

ENV_FLAGS = [("env.kind", "env"), ("env.dims", None), ("env.cells", None), ("env.shape", None),
             ("env.goals", None), ("env.max_steps", None)]
METRIC_FLAGS = [("metric.latent_dim", None), ("metric.lam", None), ("metric.variant", None),
                ("metric.eps_d", None), ("metric.batch_size", None), ("metric.batches_per_epoch", None),
                ("metric.epochs", None), ("metric.lr", None), ("metric.hidden", None),
                ("metric.meta_state", None), ("metric.audit_triples", None)]
AGENT_FLAGS = [("agent.gamma", None), ("agent.epochs", None), ("agent.batches_per_epoch", None),
               ("agent.batch_size", None), ("agent.lr", None), ("agent.hidden", None)]
# sweeps train both the embedding and the baselines, so baseline flags get a prefix
BASELINE_FLAGS = [("agent.gamma", None)] + [(p, "policy_" + p.split(".")[1]) for p, _ in AGENT_FLAGS[1:]]

VERBS = {
    "gen-data": ("collect an epsilon-mixed dataset",
                 ENV_FLAGS + [("data.tier", None), ("data.epsilon", None), ("data.episodes", None),
                              ("data.seed", "seed"), ("agent.gamma", None)]),
    "train": ("fit the distance-monotonic embedding",
              [("data.path", "data"), ("metric.seed", "seed")] + METRIC_FLAGS),
    "train-actor": ("fit a policy-gradient actor on a frozen embedding",
                    [("data.path", "data"), ("run.model", "model"), ("agent.seed", "seed"),
                     ("agent.mode", None), ("agent.advantage", None)] + AGENT_FLAGS),
    "train-bc": ("behavior cloning baseline",
                 [("data.path", "data"), ("agent.seed", "seed")] + AGENT_FLAGS),
    "train-dqn": ("offline DQN baseline",
                  [("data.path", "data"), ("agent.seed", "seed"), ("agent.target_sync", None)] + AGENT_FLAGS),
    "eval": ("roll out a policy and report success and return",
             ENV_FLAGS + [("data.path", "data"), ("run.policy", "policy"), ("run.model", "model"),
                          ("agent.gamma", None), ("agent.mode", None), ("agent.sample", None),
                          ("harness.episodes", None), ("harness.seed", "seed")]),
    "check-mono": ("monotonicity violation rate of an embedding",
                   ENV_FLAGS + [("data.path", "data"), ("run.model", "model"), ("harness.triples", None),
                                ("harness.seed", "seed")]),
    "verify-theorem": ("greedy-vs-optimal agreement next to exhaustive violations",
                       ENV_FLAGS + [("run.model", "model"), ("agent.gamma", None)]),
    "sweep-quality": ("methods x dataset tiers x seeds",
                      ENV_FLAGS + [("harness.tiers", None), ("harness.methods", None),
                                   ("harness.seeds", None), ("harness.episodes", None),
                                   ("harness.triples", None), ("harness.jobs", None),
                                   ("data.episodes", "data_episodes")] + METRIC_FLAGS + BASELINE_FLAGS
                      + [("agent.target_sync", None)]),
    "sweep-complexity": ("updates-to-solve against maze size",
                         [("env.dims", None), ("harness.sizes", None), ("harness.methods", None),
                          ("harness.max_updates", None), ("harness.cadence", None),
                          ("harness.solve_episodes", None), ("harness.seed", "seed"),
                          ("agent.gamma", None), ("agent.target_sync", None)]),
    "multi-goal": ("goal choice against the discount with two rewarded goals",
                   ENV_FLAGS + [("harness.gammas", None), ("data.episodes", "data_episodes"),
                                ("data.tier", None), ("metric.seed", "seed"), ("run.model", "model")]
                   + METRIC_FLAGS),
    "plot": ("redraw the SVG plots of a finished run directory", []),
}


def _flag(path, name):
    return "--" + (name or path.split(".")[1]).replace("_", "-")


def _help(path):
    section, key = path.split(".")
    default, typ, text = SCHEMA[section][key]
    return f"{text} (default: {default!r})"


def build_parser():
    p = argparse.ArgumentParser(prog="metricrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="verb", metavar="VERB")
    for verb, (text, flags) in VERBS.items():
        sp = sub.add_parser(verb, help=text, description=text)
        sp.add_argument("--config", help="INI config file; flags override it")
        if verb == "plot":
            sp.add_argument("run_dir", help="run directory holding metrics.csv")
            continue
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite an existing output directory")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key")
        if verb == "check-mono":
            sp.add_argument("--exhaustive", action="store_true", help="enumerate all triples")
        if verb == "verify-theorem":
            sp.add_argument("--fixture", choices=["isometric-path", "swapped-path"],
                            help="built-in 6-node path embedding instead of a checkpoint")
        seen = set()
        for path, name in flags:
            flag = _flag(path, name)
            assert flag not in seen, f"duplicate flag {flag} for {verb}"
            seen.add(flag)
            typ = SCHEMA[path.split(".")[0]][path.split(".")[1]][1]
            if typ is bool:
                sp.add_argument(flag, dest=path, action="store_const", const=True, default=None,
                                help=_help(path))
            else:
                sp.add_argument(flag, dest=path, default=None, help=_help(path))
    return p


def resolve(args):
    """Defaults, then the config file, then ``--set``, then dedicated flags."""
    cfg = RunConfig()
    if args.config:
        cfg.merge_file(args.config)
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    for k, v in vars(args).items():
        if "." in k and v is not None:
            cfg.set(k, v)
    if getattr(args, "out", None):
        cfg.set("run.out", args.out)
    if getattr(args, "force", False):
        cfg.set("run.force", True)
    if "METRICRL_THREADS" in os.environ and not _explicit(args, "harness.jobs"):
        cfg.set("harness.jobs", os.environ["METRICRL_THREADS"])
    return cfg.validate()


def _explicit(args, path):
    return getattr(args, path, None) is not None


def prepare_out(cfg, verb):
    out = cfg["run.out"] or os.path.join(os.environ.get("METRICRL_OUTPUT_ROOT", "runs"), verb)
    if os.path.isdir(out) and os.listdir(out) and not cfg["run.force"]:
        raise UsageError(f"output directory {out} already exists; pass --force to overwrite it")
    os.makedirs(out, exist_ok=True)
    cfg.set("run.out", out)
    atomic_write_text(os.path.join(out, "config.ini"), cfg.to_ini())
    return out


def _need(cfg, path, flag):
    if not cfg[path]:
        raise UsageError(f"missing required {flag}")
    return cfg[path]


def _load_data(cfg):
    path = _need(cfg, "data.path", "--data")
    if not os.path.isdir(path):
        raise DatasetIOError(f"dataset directory not found: {path}")
    return read_dataset(path)


def _index_for(cfg):
    """Environment from the dataset manifest when ``--data`` is given."""
    if cfg["data.path"]:
        spec = dataset_env_spec(_load_data(cfg))
    else:
        spec = cfg.env_spec()
    return EnvIndex.build(make_env(spec))


def _report(out, lines):
    atomic_write_text(os.path.join(out, "report.txt"), "\n".join(lines) + "\n")
    for line in lines:
        print(line)


# --- verbs -----------------------------------------------------------------------

def cmd_gen_data(cfg, args):
    out = prepare_out(cfg, "gen-data")
    data = collect(make_env(cfg.env_spec()), cfg["data.tier"], cfg["data.episodes"], cfg["data.seed"],
                   cfg["agent.gamma"], cfg.epsilon)
    manifest = write_dataset(data, out)
    harness.write_csv(os.path.join(out, "metrics.csv"), [{
        "transitions": len(data), "episodes": cfg["data.episodes"], "tier": cfg["data.tier"],
        "epsilon": manifest["epsilon"], "success_episodes": int(data.terminal.sum()),
        "checksum": manifest["checksum"]}])
    _report(out, [f"transitions  {len(data)}", f"episodes     {cfg['data.episodes']}",
                  f"tier         {cfg['data.tier']} (epsilon {manifest['epsilon']})",
                  f"rng          {RNG_ALGORITHM}", f"checksum     {manifest['checksum']}",
                  f"written to   {out}"])


def cmd_train(cfg, args):
    data = _load_data(cfg)
    out = prepare_out(cfg, "train")
    mcfg = cfg.metric_config()
    model, tlog = train(data, mcfg, progress=lambda row: log.info(
        "epoch %d loss %.4f residual %.4f", row["epoch"], row["mean_loss"], row["constraint_residual"]))
    path = os.path.join(out, "embedding.ckpt")
    model.save(path)
    atomic_write_text(os.path.join(out, "metrics.csv"), tlog.csv_text())
    last = tlog.epochs[-1]
    _report(out, [f"epochs              {len(tlog.epochs)}", f"final loss          {last['mean_loss']!r}",
                  f"final residual      {last['constraint_residual']!r}",
                  f"clamped distances   {tlog.clamp_total}", f"false negatives     {tlog.false_negatives}",
                  f"meta state used     {tlog.used_meta}",
                  f"checkpoint          {path}"])


def _fit_policy(cfg, kind):
    data = _load_data(cfg)
    out = prepare_out(cfg, kind)
    n_actions = make_env(dataset_env_spec(data)).n_actions
    if kind == "train-actor":
        emb = EmbeddingModel.load(_need(cfg, "run.model", "--model"))
        vm = value_model_for_env(emb, make_env(dataset_env_spec(data)), cfg["agent.gamma"], cfg["agent.mode"])
        model, fit = train_pg_actor(data, vm, cfg.policy_config(), n_actions)
        name = "actor.ckpt"
    elif kind == "train-bc":
        model, fit = train_bc(data, cfg.policy_config(), n_actions)
        name = "bc.ckpt"
    else:
        model, fit = train_dqn(data, cfg.dqn_config(), n_actions)
        name = "dqn.ckpt"
    path = os.path.join(out, name)
    model.save(path)
    rows = [{"epoch": i, "mean_loss": v} for i, v in enumerate(fit.losses)]
    harness.write_csv(os.path.join(out, "metrics.csv"), rows, ["epoch", "mean_loss"])
    lines = [f"epochs       {len(fit.losses)}", f"final loss   {fit.losses[-1]!r}", f"checkpoint   {path}"]
    if fit.failed:
        lines.append(f"FAILED       {fit.reason}")
    _report(out, lines)
    if fit.failed:
        raise TrainingError(fit.reason)


def cmd_eval(cfg, args):
    index = _index_for(cfg)
    out = prepare_out(cfg, "eval")
    which = cfg["run.policy"] or ("metricrl" if cfg["run.model"] else "oracle")
    gamma = cfg["agent.gamma"]
    if which == "oracle":
        policy = OraclePolicy(gamma)
    elif which == "random":
        policy = RandomPolicy()
    elif which == "metricrl":
        policy = GreedyValuePolicy(EmbeddingModel.load(_need(cfg, "run.model", "--model")), gamma,
                                   cfg["agent.mode"])
    elif os.path.isfile(which):
        policy = PolicyModel.load(which, sample=cfg["agent.sample"])
    else:
        raise UsageError(f"--policy must be metricrl, oracle, random or a checkpoint path, got {which!r}")
    rep = harness.evaluate(policy, index, cfg["harness.episodes"], cfg["harness.seed"], gamma)
    row = {"policy": which if not os.path.isfile(which) else rep.policy, "episodes": rep.episodes,
           "seed": cfg["harness.seed"], "success_rate": rep.success_rate, "mean_return": rep.mean_return,
           "mean_length": rep.mean_length}
    harness.write_csv(os.path.join(out, "metrics.csv"), [row])
    _report(out, [f"policy        {row['policy']}", f"episodes      {rep.episodes}",
                  f"success rate  {rep.success_rate!r}", f"mean return   {rep.mean_return!r}",
                  f"mean length   {rep.mean_length!r}"])


def _mono_report(out, rep: MonotonicityReport, g):
    row = {"violation_rate": rep.rate, "violations": rep.violations, "triples": rep.triples,
           "exhaustive": int(rep.exhaustive), "resampled": rep.resampled}
    harness.write_csv(os.path.join(out, "metrics.csv"), [row])
    wit = [{"s1": ":".join(map(repr, g.keys[a])), "s2": ":".join(map(repr, g.keys[b])),
            "s3": ":".join(map(repr, g.keys[c])), "d13": d13, "d23": d23, "z13": z13, "z23": z23}
           for a, b, c, d13, d23, z13, z23 in rep.witnesses]
    harness.write_csv(os.path.join(out, "witnesses.csv"), wit,
                      ["s1", "s2", "s3", "d13", "d23", "z13", "z23"])
    return [f"violation rate  {rep.rate!r}", f"violations      {rep.violations} / {rep.triples}",
            f"exhaustive      {rep.exhaustive}", f"witnesses       {len(wit)} (witnesses.csv)"]


def cmd_check_mono(cfg, args):
    model = EmbeddingModel.load(_need(cfg, "run.model", "--model"))
    if cfg["data.path"]:
        g = build_graph(_load_data(cfg))
        if g.n_components > 1:
            g = add_meta_state(g)
    else:
        g = build_graph(EnvIndex.build(make_env(cfg.env_spec())))
    out = prepare_out(cfg, "check-mono")
    rep = monotonicity_violation_rate(model, g, cfg["harness.triples"], make_rng(cfg["harness.seed"]),
                                      exhaustive=True if args.exhaustive else None)
    _report(out, _mono_report(out, rep, g))


def cmd_verify_theorem(cfg, args):
    if args.fixture:
        index, model = harness.path_fixture(swap=args.fixture == "swapped-path")
    else:
        index = EnvIndex.build(make_env(cfg.env_spec()))
        model = EmbeddingModel.load(_need(cfg, "run.model", "--model or --fixture"))
    out = prepare_out(cfg, "verify-theorem")
    rep = harness.verify_theorem(model, index, cfg["agent.gamma"])
    harness.write_csv(os.path.join(out, "metrics.csv"), [{
        "states": rep.states, "agreement": rep.agreement, "exact_agreement": rep.exact_agreement,
        "violations": rep.violations, "triples": rep.triples, "implication_holds": int(rep.implication_holds)}])
    _report(out, rep.lines())
    if not rep.implication_holds:
        raise MetricRLError("zero violations but greedy disagrees with the optimal policy")


def cmd_sweep_quality(cfg, args):
    spec = cfg.env_spec()
    out = prepare_out(cfg, "sweep-quality")
    budget = harness.QualityBudget(metric=cfg.metric_config(), policy=cfg.policy_config(),
                                   dqn=cfg.dqn_config(), data_episodes=cfg["data.episodes"],
                                   eval_episodes=cfg["harness.episodes"], audit_triples=cfg["harness.triples"],
                                   gamma=cfg["agent.gamma"])
    rows = harness.quality_sweep(spec, str_list(cfg["harness.tiers"]), str_list(cfg["harness.methods"]),
                                 int_list(cfg["harness.seeds"]), budget, cfg["harness.jobs"])
    harness.write_csv(os.path.join(out, "metrics.csv"), rows, list(harness.QUALITY_FIELDS))
    _plot_quality(out, rows)
    lines = [f"{'tier':<8}{'method':<14}{'success mean':>14}{'std':>8}{'runs':>6}"]
    for (tier, method), (m, s, n) in harness.summarize_quality(rows).items():
        lines.append(f"{tier:<8}{method:<14}{m:>14.4f}{s:>8.4f}{n:>6}")
    failed = [r for r in rows if r["status"] != "ok"]
    lines.append(f"failed runs: {len(failed)}")
    _report(out, lines)


def cmd_sweep_complexity(cfg, args):
    out = prepare_out(cfg, "sweep-complexity")
    dims = cfg["env.dims"]
    budget = harness.SolveBudget(max_updates=cfg["harness.max_updates"], cadence=cfg["harness.cadence"],
                                 eval_episodes=cfg["harness.solve_episodes"], gamma=cfg["agent.gamma"],
                                 seed=cfg["harness.seed"], dqn=cfg.dqn_config())
    methods = str_list(cfg["harness.methods"])
    methods = [m for m in methods if m in ("metricrl", "dqn")] or ["metricrl", "dqn"]
    specs = [hypermaze_spec(m, dims) for m in int_list(cfg["harness.sizes"])]
    points = harness.solve_complexity_sweep(methods, specs, budget)
    rows = [p.row() for p in points]
    harness.write_csv(os.path.join(out, "metrics.csv"), rows,
                      ["cells", "dims", "method", "updates_to_solve", "censored"])
    _plot_complexity(out, rows)
    lines = [f"{p.method:<10} cells={p.size:<4} dims={p.dims} "
             + (f"censored at {budget.max_updates}" if p.censored else f"solved after {p.updates} updates")
             for p in points]
    sizes = int_list(cfg["harness.sizes"])
    for m in methods:
        ratio = harness.growth_ratio(points, m, sizes[0], sizes[-1])
        lines.append(f"{m} growth ratio u({sizes[-1]})/u({sizes[0]}): {ratio}")
    _report(out, lines)


def cmd_multi_goal(cfg, args):
    spec = cfg.env_spec()
    if len(spec.goals) < 2:
        from .envs import multigoal_spec
        spec = multigoal_spec(spec.cells)
    out = prepare_out(cfg, "multi-goal")
    emb = EmbeddingModel.load(cfg["run.model"]) if cfg["run.model"] else None
    res = harness.multi_goal_study(spec, float_list(cfg["harness.gammas"]), emb, cfg.metric_config(),
                                   cfg["data.tier"], cfg["data.episodes"], cfg["metric.seed"])
    harness.write_csv(os.path.join(out, "metrics.csv"), res.rows(),
                      ["gamma", "start", "chosen_goal", "optimal_goal", "crossover"])
    harness.write_csv(os.path.join(out, "gradient_field.csv"), res.field_rows,
                      ["gamma", "x", "y", "value", "grad_x", "grad_y"])
    _plot_multi_goal(out, res.field_rows)
    br = res.bracket_report()
    best = int(np.argmax(res._rewards))
    last_ok = bool(np.all(res.chosen[-1] == best))
    _report(out, [f"starts tested           {len(res.starts)}",
                  f"flip matches exactly    {int(br['exact'].sum())}",
                  f"flip within one step    {int(br['within_one'].sum())}",
                  f"goal not reached        {int((res.chosen < 0).sum())}",
                  f"top-reward goal at gamma={res.gammas[-1]}: {last_ok}"])


# --- plots ------------------------------------------------------------------------

def _plot_quality(out, rows):
    groups, errors = {}, {}
    for (tier, method), (m, s, _) in harness.summarize_quality(rows).items():
        groups.setdefault(tier, {})[method] = m
        errors.setdefault(tier, {})[method] = s
    atomic_write_text(os.path.join(out, "quality.svg"),
                      plotting.bar_chart(groups, "success rate by dataset tier", "success rate", errors))


def _plot_complexity(out, rows):
    series = {}
    for r in rows:
        u = r["updates_to_solve"]
        series.setdefault(r["method"], []).append((float(r["cells"]), float(u) if u not in (None, "") else None))
    atomic_write_text(os.path.join(out, "complexity.svg"),
                      plotting.line_chart(series, "updates to solve", "cells per dimension", "updates",
                                          log_y=True))


def _plot_multi_goal(out, field_rows):
    by = {}
    for r in field_rows:
        by.setdefault(float(r["gamma"]), []).append((int(r["x"]), int(r["y"]), float(r["grad_x"]),
                                                     float(r["grad_y"])))
    for gm, rows in by.items():
        atomic_write_text(os.path.join(out, f"gradient_gamma_{gm:g}.svg"),
                          plotting.quiver_chart(rows, f"value gradient, gamma = {gm:g}"))


def cmd_plot(args):
    path = os.path.join(args.run_dir, "metrics.csv")
    if not os.path.isfile(path):
        raise UsageError(f"no metrics.csv in {args.run_dir}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fields = set(rows[0]) if rows else set()
    if {"tier", "method", "success_rate"} <= fields:
        for r in rows:
            r["success_rate"] = float(r["success_rate"]) if r["success_rate"] else None
        _plot_quality(args.run_dir, rows)
    elif "updates_to_solve" in fields:
        _plot_complexity(args.run_dir, rows)
    elif "chosen_goal" in fields:
        with open(os.path.join(args.run_dir, "gradient_field.csv"), newline="") as fh:
            _plot_multi_goal(args.run_dir, list(csv.DictReader(fh)))
    elif "mean_loss" in fields:
        series = {"loss": [(float(r["epoch"]), float(r["mean_loss"])) for r in rows]}
        if "constraint_residual" in fields:
            series["residual"] = [(float(r["epoch"]), float(r["constraint_residual"])) for r in rows]
        atomic_write_text(os.path.join(args.run_dir, "training.svg"),
                          plotting.line_chart(series, "training", "epoch", ""))
    else:
        raise UsageError(f"nothing to plot for {path}")
    print(f"plots written to {args.run_dir}")


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "train-actor": lambda c, a: _fit_policy(c, "train-actor"),
            "train-bc": lambda c, a: _fit_policy(c, "train-bc"),
            "train-dqn": lambda c, a: _fit_policy(c, "train-dqn"), "eval": cmd_eval,
            "check-mono": cmd_check_mono, "verify-theorem": cmd_verify_theorem,
            "sweep-quality": cmd_sweep_quality, "sweep-complexity": cmd_sweep_complexity,
            "multi-goal": cmd_multi_goal}


def exit_code(exc):
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (DataError, DatasetIOError, ResourceError)):
        return EXIT_DATA
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    return EXIT_USAGE


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verb:
        parser.print_help()
        return EXIT_USAGE
    try:
        if args.verb == "plot":
            cmd_plot(args)
        else:
            HANDLERS[args.verb](resolve(args), args)
    except MetricRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, TrainingError) and exc.batch_index is not None:
            print(f"failing batch index: {exc.batch_index}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
