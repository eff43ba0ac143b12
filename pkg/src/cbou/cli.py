"""Command-line front end: experiment runner, posterior demo, spec validator.

Subcommands:
  run             optimize a target on an SCM with a chosen method × seeds
  posterior-demo  posterior-only updates comparing obs-only vs
                  interventionally augmented accuracy/F1 series
  validate        load an SCM spec file and check its invariants

Configuration is YAML (version 1); any flag overrides the matching config
key. Outputs are deterministic for a fixed (config, seed): per-seed JSONL
traces, a per-trial metrics CSV, and a summary CSV. Wall-clock columns are
zero unless --timing is passed, keeping replays byte-identical.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .cbo_loop import RUNNERS, ExperimentConfig, LoopError
from .dr_prior import DrConfig, bootstrap_prior
from .metrics import (mean_accuracy, mean_f1,
                      parent_intervention_proportion, y_bar, y_star)
from .parent_posterior import (LINEAR, NONLINEAR, ParentSet, PosteriorConfig,
                               init_beliefs, update)
from .scm import (BUILTIN_SCMS, Intervention, ScmError, default_domains,
                  generate_erdos_renyi, load_scm_spec, sample_interventional,
                  sample_observational)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_SCM = 3
EXIT_RUNTIME = 4

CONFIG_VERSION = 1
OUTPUT_ENV = "CBOU_OUTPUT_ROOT"

CSV_FIELDS = ["method", "seed", "trial", "element_mask", "value_json", "y",
              "y_star", "mean_acc", "mean_f1", "wall_ms"]

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "scm": "toy",
    "method": "cbo-u",
    "seeds": 1,
    "trials": 30,
    "n_obs": 200,
    "n_int": 2,
    "threshold": 1e-6,
    "grid_size": 100,
    "timing": False,
    "out_dir": "cbou-out",
    "dr": {},          # DrConfig field overrides
    "posterior": {},   # PosteriorConfig field overrides
    "demo": {"steps": 10, "batch": 20},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    cfg = {k: (dict(v) if isinstance(v, dict) else v)
           for k, v in DEFAULT_CONFIG.items()}
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config {path} is empty")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    if raw.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')}")
    unknown = set(raw) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in raw.items():
        if isinstance(DEFAULT_CONFIG.get(k), dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {k!r} must be a mapping")
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


def _seed_list(spec):
    if isinstance(spec, int):
        return list(range(spec))
    if isinstance(spec, (list, tuple)):
        return [int(s) for s in spec]
    raise ConfigError(f"bad seeds spec: {spec!r}")


def resolve_scm(name, seed):
    """Builtin name, er-<kind>-<d> generator, or a spec file path."""
    if name in BUILTIN_SCMS:
        return BUILTIN_SCMS[name]()
    if name.startswith("er-"):
        parts = name.split("-")
        if len(parts) != 3 or parts[1] not in ("linear", "nonlinear"):
            raise ScmError(
                f"bad random-graph spec {name!r}; use er-linear-<d> or "
                "er-nonlinear-<d>")
        try:
            d = int(parts[2])
        except ValueError as exc:
            raise ScmError(f"bad node count in {name!r}") from exc
        return generate_erdos_renyi(d, parts[1], seed)
    if os.path.exists(name):
        return load_scm_spec(name)
    raise ScmError(f"unknown SCM {name!r} (not a builtin, er- spec, or file)")


def _experiment_config(cfg, seed):
    post_kwargs = dict(cfg["posterior"])
    post_kwargs.setdefault(
        "mode", LINEAR if str(cfg["scm"]).startswith("er-linear") else
        NONLINEAR)
    return ExperimentConfig(
        n_obs=int(cfg["n_obs"]), n_int=int(cfg["n_int"]),
        trials=int(cfg["trials"]), seed=seed,
        dr=DrConfig(**cfg["dr"]),
        posterior=PosteriorConfig(**post_kwargs),
        threshold=float(cfg["threshold"]), grid_size=int(cfg["grid_size"]),
        timing=bool(cfg["timing"]),
    )


def _json_line(record) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True) + "\n"


def _element_mask(element, num_nodes) -> str:
    return "".join("1" if j in set(element) else "0"
                   for j in range(num_nodes))


def _write_trace(path, trace, cfg_echo):
    with open(path, "w") as fh:
        fh.write(_json_line({"record": "header", "config": cfg_echo,
                             **trace.header}))
        for rec in trace.iterations:
            fh.write(_json_line({"record": "iteration", **asdict(rec)}))
        fh.write(_json_line({"record": "summary", **trace.summary}))


def _out_dir(cfg, override):
    root = override or os.environ.get(OUTPUT_ENV) or cfg["out_dir"]
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        seeds = _seed_list(cfg["seeds"])
        if cfg["method"] not in RUNNERS:
            raise ConfigError(
                f"unknown method {cfg['method']!r}; "
                f"choose from {sorted(RUNNERS)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg, args.out)
    rows, summary_rows = [], []
    for seed in seeds:
        try:
            scm = resolve_scm(cfg["scm"], seed)
        except (ScmError, OSError) as exc:
            print(f"SCM load error: {exc}", file=sys.stderr)
            return EXIT_SCM
        try:
            trace = RUNNERS[cfg["method"]](scm, _experiment_config(cfg, seed))
        except LoopError as exc:
            tag = f"{cfg['method']}-seed{seed}"
            _write_trace(out / f"trace-{tag}.jsonl", exc.trace, cfg)
            print(f"runtime abort in {tag}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        except (ValueError, RuntimeError) as exc:
            print(f"runtime abort: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        tag = f"{cfg['method']}-seed{seed}"
        _write_trace(out / f"trace-{tag}.jsonl", trace, cfg)
        true_set = ParentSet.of(sorted(scm.dag.true_parent_set()))
        for rec in trace.iterations:
            rows.append({
                "method": cfg["method"], "seed": seed, "trial": rec.t,
                "element_mask": _element_mask(rec.element,
                                              scm.dag.num_nodes),
                "value_json": json.dumps(rec.values),
                "y": repr(rec.y), "y_star": repr(rec.y_star),
                "mean_acc": repr(rec.mean_acc), "mean_f1": repr(rec.mean_f1),
                "wall_ms": repr(rec.wall_ms),
            })
        summary_rows.append({
            "method": cfg["method"], "seed": seed,
            "y_star": repr(y_star(trace)), "y_bar": repr(y_bar(trace)),
            "parent_proportion": repr(
                parent_intervention_proportion(trace, true_set)),
        })
    with open(out / f"metrics-{cfg['method']}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)
    with open(out / f"summary-{cfg['method']}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "seed", "y_star",
                                           "y_bar", "parent_proportion"])
        w.writeheader()
        w.writerows(summary_rows)
    ys = [float(r["y_star"]) for r in summary_rows]
    print(f"{cfg['method']} on {cfg['scm']}: seeds={len(seeds)} "
          f"mean Y*={np.mean(ys):.4f} (std {np.std(ys):.4f}); "
          f"outputs in {out}")
    return EXIT_OK


def posterior_demo(scm, cfg, seed):
    """Obs-only vs interventionally augmented posterior quality series.

    Both posteriors start from the same bootstrap prior with beliefs at
    their Gaussian prior; per step the obs-only posterior consumes a fresh
    observational batch while the augmented one alternates observational
    and single-variable interventional batches.
    """
    rng = np.random.default_rng(seed)
    target = scm.dag.target
    true_set = ParentSet.of(sorted(scm.dag.true_parent_set()))
    obs = sample_observational(scm, cfg["n_obs"],
                               int(rng.integers(0, 2**31 - 1)))
    domains = scm.domains or default_domains(scm, obs)
    prior = bootstrap_prior(obs, DrConfig(**cfg["dr"]), seed=seed,
                            target=target)
    pcfg_kwargs = dict(cfg["posterior"])
    pcfg_kwargs.setdefault("mode", LINEAR)
    pcfg = PosteriorConfig(target=target, seed=seed, **pcfg_kwargs)
    post_obs = init_beliefs(prior, obs, pcfg, fit_obs=False)
    post_int = init_beliefs(prior, obs, pcfg, fit_obs=False)
    manipulative = scm.dag.manipulative
    steps = int(cfg["demo"]["steps"])
    batch = int(cfg["demo"]["batch"])
    series = {"obs_acc": [], "obs_f1": [], "int_acc": [], "int_f1": []}
    for step in range(steps):
        fresh = sample_observational(scm, batch,
                                     int(rng.integers(0, 2**31 - 1)))
        for row in fresh.rows:
            update(post_obs, row, row[target])
        if step % 2 == 0:
            for row in fresh.rows:
                update(post_int, row, row[target])
        else:
            for _ in range(batch):
                j = int(manipulative[rng.integers(0, len(manipulative))])
                lo, hi = domains[j]
                iv = Intervention([j], [float(rng.uniform(lo, hi))])
                d = sample_interventional(scm, iv, 1,
                                          int(rng.integers(0, 2**31 - 1)))
                update(post_int, d.rows[0], d.rows[0][target])
        series["obs_acc"].append(mean_accuracy(post_obs, true_set))
        series["obs_f1"].append(mean_f1(post_obs, true_set))
        series["int_acc"].append(mean_accuracy(post_int, true_set))
        series["int_f1"].append(mean_f1(post_int, true_set))
    return series


def cmd_posterior_demo(args) -> int:
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        seeds = _seed_list(cfg["seeds"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg, args.out)
    wins = 0
    for seed in seeds:
        try:
            scm = resolve_scm(cfg["scm"], seed)
        except (ScmError, OSError) as exc:
            print(f"SCM load error: {exc}", file=sys.stderr)
            return EXIT_SCM
        try:
            series = posterior_demo(scm, cfg, seed)
        except (ValueError, RuntimeError) as exc:
            print(f"runtime abort: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        with open(out / f"posterior-demo-seed{seed}.jsonl", "w") as fh:
            fh.write(_json_line({"record": "header", "seed": seed,
                                 "scm": cfg["scm"], "config": cfg}))
            fh.write(_json_line({"record": "series", **series}))
        wins += series["int_acc"][-1] >= series["obs_acc"][-1]
        print(f"seed {seed}: final accuracy obs={series['obs_acc'][-1]:.4f} "
              f"int={series['int_acc'][-1]:.4f}")
    print(f"interventional >= observational accuracy in "
          f"{wins}/{len(seeds)} seeds; outputs in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scm = resolve_scm(args.scm, seed=0)
    except (ScmError, OSError, ValueError) as exc:
        print(f"invalid SCM: {exc}", file=sys.stderr)
        return EXIT_SCM
    dag = scm.dag
    roles = {r: sum(x == r for x in dag.roles) for r in set(dag.roles)}
    print(f"nodes: {dag.num_nodes}")
    print(f"edges: {len(dag.edges)}")
    print(f"target: {scm.node_name(dag.target)}")
    print(f"roles: {roles}")
    print(f"true parents of target: "
          f"{sorted(scm.node_name(j) for j in dag.true_parent_set())}")
    return EXIT_OK


def _apply_overrides(cfg, args):
    for key in ("method", "scm", "trials", "n_obs", "n_int", "grid_size",
                "threshold", "seeds"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "seed_list", None):
        cfg["seeds"] = [int(s) for s in args.seed_list.split(",")]
    if getattr(args, "timing", False):
        cfg["timing"] = True


def build_parser():
    p = argparse.ArgumentParser(
        prog="cbou",
        description="Causal Bayesian optimization with an unknown graph")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an optimization experiment")
    run.add_argument("--config", help="YAML config path")
    run.add_argument("--method", choices=sorted(RUNNERS))
    run.add_argument("--scm", help="builtin name, er-<kind>-<d>, or path")
    run.add_argument("--trials", type=int)
    run.add_argument("--seeds", type=int, help="run seeds 0..N-1")
    run.add_argument("--seed-list", help="comma-separated explicit seeds")
    run.add_argument("--n-obs", dest="n_obs", type=int)
    run.add_argument("--n-int", dest="n_int", type=int)
    run.add_argument("--grid-size", dest="grid_size", type=int)
    run.add_argument("--threshold", type=float)
    run.add_argument("--timing", action="store_true",
                     help="record real wall times (breaks replay identity)")
    run.add_argument("--out", help=f"output dir (or ${OUTPUT_ENV})")
    run.set_defaults(func=cmd_run)

    demo = sub.add_parser("posterior-demo",
                          help="posterior-only obs vs int comparison")
    demo.add_argument("--config", help="YAML config path")
    demo.add_argument("--scm")
    demo.add_argument("--seeds", type=int)
    demo.add_argument("--seed-list")
    demo.add_argument("--n-obs", dest="n_obs", type=int)
    demo.add_argument("--out")
    demo.set_defaults(func=cmd_posterior_demo)

    val = sub.add_parser("validate", help="check an SCM spec")
    val.add_argument("scm", help="builtin name, er-<kind>-<d>, or path")
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
