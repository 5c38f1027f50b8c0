"""Command-line interface: ``bmrsw <command> [--config PATH] [options]``.

Every command is reproducible from the configuration file and master seed:
primary CSV outputs are byte-identical across re-runs and worker counts,
and timestamps appear only in the JSON manifests.
"""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, dump_json, run_bootstrap, summarize
from .cmaes import CmaEsConfig
from .config import RunConfig, load_config
from .errors import BmrswError, ConfigError, ReplicateError
from .lambda_select import LambdaGrid, default_grid, run_selection, suggest_elbow
from .measures import WeightedDiscreteMeasure
from .mmd import large_bandwidth_limit_check
from .rsw import SgaConfig, extract_reweighting, sga_estimate
from .simulators import (DEFAULT_THETA0, ContaminationSpec, NoiseBank, derive_seed, generate_dataset,
                         get_simulator, make_rng, simulate_batch)

log = logging.getLogger("bmrsw")

ENV_SEED = "BMRSW_SEED"
ENV_WORKERS = "BMRSW_WORKERS"
SELECTION_MANIFEST = "selection_manifest.json"

FORMATS = """\
output files (all floats are full-precision decimal, written with repr):
  dataset.csv           x0,...,x{m-1},weight       one row per atom
  bootstrap.csv         replicate,<param names>,loss
  lambda_diagnostic.csv lambda,replicate,value      value = W2(fitted model, reweighted data)
  mmd_limit.csv         sigma0,scaled_mmd_sq,target target = (mean(xs) - mean(ys))^2
  summary.json          per-parameter median, lower, upper, width
  *_manifest.json       seeds, settings and a timestamp (the only non-reproducible files)
environment: BMRSW_SEED overrides master_seed, BMRSW_WORKERS overrides parallelism;
command-line flags override both.
"""


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _resolve(cfg: RunConfig, args) -> RunConfig:
    seed = cfg.master_seed
    if os.environ.get(ENV_SEED):
        seed = int(os.environ[ENV_SEED])
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    workers = cfg.parallelism
    if os.environ.get(ENV_WORKERS):
        workers = int(os.environ[ENV_WORKERS])
    if getattr(args, "workers", None) is not None:
        workers = args.workers
    if workers is None:
        workers = os.cpu_count() or 1
    out = args.out if getattr(args, "out", None) else cfg.output_dir
    cfg = replace(cfg, master_seed=int(seed), parallelism=int(workers), output_dir=out)
    lam = getattr(args, "lam", None)
    if lam is not None:
        cfg = replace(cfg, lam="auto" if lam == "auto" else float(lam))
    return cfg.validate()


def _simulator(cfg: RunConfig):
    spec = get_simulator(cfg.simulator.name)
    if cfg.simulator.lower is not None or cfg.simulator.upper is not None:
        spec = spec.with_bounds(cfg.simulator.lower or spec.param_lower, cfg.simulator.upper or spec.param_upper)
    return spec


def _theta0(cfg: RunConfig, spec) -> tuple:
    if cfg.simulator.theta0 is not None:
        return tuple(cfg.simulator.theta0)
    if spec.name in DEFAULT_THETA0:
        return DEFAULT_THETA0[spec.name]
    return tuple(0.5 * (lo + hi) for lo, hi in zip(spec.param_lower, spec.param_upper))


def _contamination(cfg: RunConfig) -> ContaminationSpec:
    c = cfg.dataset.contamination
    contaminant = get_simulator(c.contaminant) if c.contaminant else None
    return ContaminationSpec(c.epsilon, c.rho, c.dirac, contaminant,
                             tuple(c.contaminant_theta) if c.contaminant_theta else None)


def _load_dataset(cfg: RunConfig) -> WeightedDiscreteMeasure:
    d = cfg.dataset
    if d.source == "csv":
        return WeightedDiscreteMeasure.from_csv(d.path)
    clean = get_simulator(d.simulator or cfg.simulator.name)
    if d.theta_star is None:
        raise ConfigError("field 'dataset.theta_star': required when source is 'generate'")
    seed = int(derive_seed(cfg.master_seed, 0, "dataset").generate_state(1, np.uint64)[0])
    return generate_dataset(clean, tuple(d.theta_star), _contamination(cfg), d.n, seed)


def _sga(cfg: RunConfig, lam: float) -> SgaConfig:
    s = cfg.sga
    return SgaConfig(iterations=s.iterations, lam=float(lam), learning_rate_scale=s.learning_rate_scale,
                     burn_in_fraction=s.burn_in_fraction)


def _bootstrap_config(cfg: RunConfig, lam: float, spec) -> BootstrapConfig:
    c = cfg.cmaes
    cm = CmaEsConfig(spec.param_lower, spec.param_upper, _theta0(cfg, spec), population=c.population,
                     rounds=c.rounds, sigma0=c.sigma0, max_resamples=c.max_resamples)
    return BootstrapConfig(lam=float(lam), cmaes=cm, replicates=cfg.bootstrap.replicates, sga=_sga(cfg, lam),
                           master_seed=cfg.master_seed, parallelism=cfg.parallelism)


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _write(path: str, text: str):
    with open(path, "w") as fh:
        fh.write(text)


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.dataset.source != "generate":
        raise ConfigError("field 'dataset.source': simulate needs 'generate'")
    data = _load_dataset(cfg)
    out = _outdir(cfg)
    data.to_csv(os.path.join(out, "dataset.csv"))
    dump_json({"command": "simulate", "timestamp": _timestamp(), "master_seed": cfg.master_seed,
               "simulator": cfg.dataset.simulator or cfg.simulator.name, "theta_star": cfg.dataset.theta_star,
               "n": cfg.dataset.n, "contamination": cfg.to_dict()["dataset"]["contamination"]},
              os.path.join(out, "simulate_manifest.json"))
    print(f"wrote {data.n} rows to {os.path.join(out, 'dataset.csv')}")
    return 0


def cmd_rsw_eval(cfg: RunConfig, theta, top_k: int = 10) -> int:
    spec = _simulator(cfg)
    data = _load_dataset(cfg)
    lam = cfg.lam if cfg.lam != "auto" else _auto_lambda(cfg)
    theta = spec.check_theta(theta)
    bank = NoiseBank.generate(int(derive_seed(cfg.master_seed, 0, "rsw-eval").generate_state(1, np.uint64)[0]),
                              cfg.sga.iterations, spec.noise_dim)
    result = sga_estimate(data, simulate_batch(spec, theta, bank), _sga(cfg, lam))
    q = extract_reweighting(result.final_potential, lam, data)
    order = np.argsort(q.weights, kind="stable")[:top_k]
    g = result.final_potential
    report = {
        "lambda": float(lam), "theta": [float(v) for v in theta], "estimate": result.estimate,
        "potential": {"min": float(g.min()), "max": float(g.max()), "mean": float(g.mean())},
        "lowest_weight_atoms": [{"index": int(i), "atom": [float(v) for v in data.atoms[i]],
                                 "weight": float(q.weights[i])} for i in order],
    }
    text = json.dumps(report, indent=2)
    print(text)
    _write(os.path.join(_outdir(cfg), "rsw_eval.json"), text + "\n")
    return 0


def _grid(cfg: RunConfig) -> LambdaGrid:
    return default_grid() if cfg.selection.grid is None else LambdaGrid(tuple(cfg.selection.grid))


def cmd_lambda_select(cfg: RunConfig) -> int:
    spec = _simulator(cfg)
    data = _load_dataset(cfg)
    grid = _grid(cfg)
    base = _bootstrap_config(cfg, grid.values[0], spec)
    diag = run_selection(data, spec, grid, cfg.selection.m_prime, base, cfg.selection.subsample)
    if len(grid) >= 3:
        diag.suggestion = suggest_elbow(diag, min_gap=cfg.selection.min_gap,
                                        min_decrease=cfg.selection.min_decrease)
    out = _outdir(cfg)
    diag.to_csv(os.path.join(out, "lambda_diagnostic.csv"))
    dump_json(diag.to_json(), os.path.join(out, "lambda_diagnostic.json"))
    dump_json({"command": "lambda-select", "timestamp": _timestamp(), "master_seed": cfg.master_seed,
               "m_prime": cfg.selection.m_prime, "grid": list(grid.values), "suggestion": diag.suggestion},
              os.path.join(out, SELECTION_MANIFEST))
    if diag.suggestion is None:
        print("no elbow found; lambda = 0 policy "
              f"(bootstrap --lambda auto will use {cfg.selection.no_elbow_lambda})")
    else:
        print(f"suggested lambda: {diag.suggestion!r}")
    return 0


def _auto_lambda(cfg: RunConfig) -> float:
    path = os.path.join(cfg.output_dir, SELECTION_MANIFEST)
    if not os.path.exists(path):
        raise ConfigError(f"--lambda auto needs {path}; run lambda-select first")
    with open(path) as fh:
        suggestion = json.load(fh).get("suggestion")
    return cfg.selection.no_elbow_lambda if suggestion is None else float(suggestion)


def cmd_bootstrap(cfg: RunConfig) -> int:
    spec = _simulator(cfg)
    data = _load_dataset(cfg)
    lam = _auto_lambda(cfg) if cfg.lam == "auto" else float(cfg.lam)
    out = _outdir(cfg)
    manifest = {"command": "bootstrap", "timestamp": _timestamp(), "master_seed": cfg.master_seed,
                "lambda": lam, "replicates": cfg.bootstrap.replicates, "workers": cfg.parallelism}
    try:
        result = run_bootstrap(data, spec, _bootstrap_config(cfg, lam, spec))
    except ReplicateError as exc:
        manifest["error"] = str(exc)
        dump_json(manifest, os.path.join(out, "bootstrap_manifest.json"))
        print(f"bootstrap failed: {exc}", file=sys.stderr)
        return 1
    result.to_csv(os.path.join(out, "bootstrap.csv"))
    dump_json(result.to_json(), os.path.join(out, "bootstrap_log.json"))
    summary = summarize(result, cfg.bootstrap.alpha)
    dump_json(summary.to_json(), os.path.join(out, "summary.json"))
    manifest["failures"] = result.failures
    dump_json(manifest, os.path.join(out, "bootstrap_manifest.json"))
    for row in summary.to_json()["parameters"]:
        print(f"{row['name']}: median {row['median']:.6g}  interval [{row['lower']:.6g}, {row['upper']:.6g}]")
    return 0


def _read_sample(path: str) -> np.ndarray:
    return WeightedDiscreteMeasure.from_csv(path).atoms[:, 0]


def cmd_mmd_limit(cfg: RunConfig) -> int:
    m = cfg.mmd
    if m.xs and m.ys:
        xs, ys = _read_sample(m.xs), _read_sample(m.ys)
    else:
        rng = make_rng(derive_seed(cfg.master_seed, 0, "mmd"))
        xs = rng.standard_normal(m.generate_n)
        ys = rng.standard_normal(m.generate_n) + m.generate_shift
    rows = large_bandwidth_limit_check(xs, ys, m.sigmas)
    text = "sigma0,scaled_mmd_sq,target\n" + "".join(f"{s!r},{v!r},{t!r}\n" for s, v, t in rows)
    _write(os.path.join(_outdir(cfg), "mmd_limit.csv"), text)
    sys.stdout.write(text)
    return 0


def cmd_report(cfg: RunConfig) -> int:
    out = cfg.output_dir
    found = False
    sel = os.path.join(out, "lambda_diagnostic.json")
    if os.path.exists(sel):
        found = True
        with open(sel) as fh:
            diag = json.load(fh)
        print("lambda selection (median diagnostic per lambda):")
        for row in diag["summary"]:
            print(f"  {row['lambda']:10.4g}  {row['median']:.6g}  [{row['q1']:.6g}, {row['q3']:.6g}]")
        print(f"  suggestion: {diag['suggestion']}")
    summ = os.path.join(out, "summary.json")
    if os.path.exists(summ):
        found = True
        with open(summ) as fh:
            summary = json.load(fh)
        print(f"bootstrap summary (alpha = {summary['alpha']}):")
        for row in summary["parameters"]:
            print(f"  {row['name']}: median {row['median']:.6g}  [{row['lower']:.6g}, {row['upper']:.6g}]")
    if not found:
        print(f"no results in {out}", file=sys.stderr)
        return 1
    return 0


# -- argument parsing -------------------------------------------------------

def _lambda_arg(text: str):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a positive number or 'auto'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("lambda must be > 0")
    return value


def _theta_arg(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmrsw", description="Robust simulation-based inference with the "
                                     "lambda-RSW divergence.", epilog=FORMATS,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config and BMRSW_SEED)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
    common.add_argument("--lambda", dest="lam", type=_lambda_arg, metavar="FLOAT|auto",
                        help="robustness parameter; 'auto' reads the latest selection manifest")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("simulate", "generate a dataset CSV"),
                           ("lambda-select", "run the lambda-selection diagnostic"),
                           ("bootstrap", "bootstrap the minimum-divergence estimator"),
                           ("mmd-limit", "tabulate sigma0^2 * MMD^2 against its large-bandwidth limit"),
                           ("report", "summarise results found in the output directory")]:
        sub.add_parser(name, parents=[common], help=helptext, epilog=FORMATS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p = sub.add_parser("rsw-eval", parents=[common], help="estimate the divergence at one theta")
    p.add_argument("--theta", type=_theta_arg, required=True, help="comma-separated parameter values")
    p.add_argument("--top-k", type=int, default=10, help="number of lowest-weight atoms to list")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(load_config(args.config), args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "rsw-eval":
            return cmd_rsw_eval(cfg, args.theta, args.top_k)
        if args.command == "lambda-select":
            return cmd_lambda_select(cfg)
        if args.command == "bootstrap":
            return cmd_bootstrap(cfg)
        if args.command == "mmd-limit":
            return cmd_mmd_limit(cfg)
        return cmd_report(cfg)
    except (BmrswError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
