"""Command line entry points: ``slr run | verify | plan``.

Exit codes: 0 success (run: all timesteps converged; verify: all
reachsets contained the Monte Carlo estimate), 2 soft failure (some
timestep unconverged or some verdict negative), 1 hard error (bad
configuration, unreadable files, usage mistakes).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .engine import plan_reachtube, run_reachtube
from .errors import SlrError
from .oracle import mc_reachtube
from .results import (dumps_document, load_result, projection_csv,
                      reachset_of_entry, reachtube_document)

OUT_DIR_ENV = "SLR_OUT_DIR"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slr",
        description="Stochastically guaranteed reachtubes for ODE systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="compute a reachtube")
    p_run.add_argument("config", help="TOML run configuration")
    p_run.add_argument("--out", help="output directory (overrides config "
                                     f"and ${OUT_DIR_ENV})")
    p_run.add_argument("--seed", type=int, help="override the configured "
                                                "seed")
    p_run.add_argument("--parallel", type=int, default=1, metavar="W",
                       help="worker threads over timesteps (default 1)")

    p_ver = sub.add_parser("verify", help="Monte Carlo containment check "
                                          "of a result file")
    p_ver.add_argument("config", help="TOML run configuration")
    p_ver.add_argument("result", help="result JSON produced by 'slr run'")
    p_ver.add_argument("--mc-samples", type=int, default=10_000,
                       help="Monte Carlo sample count (default 10000)")
    p_ver.add_argument("--seed", type=int, default=20_25,
                       help="sampling seed for verification")

    p_plan = sub.add_parser("plan", help="report worst-case sample budgets")
    p_plan.add_argument("config", help="TOML run configuration")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_plan(args)
    except SlrError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _load_config(path) -> RunConfig:
    return parse_config(path)


def _resolve_out_dir(cfg: RunConfig, flag) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.output.directory)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    slr_cfg = cfg.slr
    if args.seed is not None:
        from dataclasses import replace
        slr_cfg = replace(slr_cfg, seed=args.seed)
    workers = max(1, args.parallel)
    out_dir = _resolve_out_dir(cfg, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    result = run_reachtube(cfg.field, cfg.x0, cfg.delta0, cfg.t0,
                           cfg.times, slr_cfg, workers=workers)
    doc = reachtube_document(result, config_echo=cfg.raw)
    result_path = out_dir / cfg.output.result_name
    result_path.write_text(dumps_document(doc))

    proj_paths = []
    if cfg.output.write_projections and cfg.output.projection is not None:
        for j, res in enumerate(result.timesteps):
            if res.status == "failed":
                continue
            csv_path = out_dir / f"projection_{j:03d}.csv"
            csv_path.write_text(projection_csv(res, cfg.output.projection))
            proj_paths.append(csv_path)

    log_lines = [f"command: run {args.config}",
                 f"seed: {slr_cfg.seed}",
                 f"workers: {workers}",
                 f"wall_seconds_total: {time.perf_counter() - started:.3f}"]
    for j, res in enumerate(result.timesteps):
        wall = (result.step_wall_seconds[j]
                if result.step_wall_seconds else float("nan"))
        if res.status == "failed":
            log_lines.append(f"t={res.t:g} status=failed wall={wall:.3f}s "
                             f"error={res.error}")
        else:
            log_lines.append(
                f"t={res.t:g} status={res.status} "
                f"delta={res.delta_guaranteed:.6g} p_bar={res.p_bar:.6f} "
                f"samples={res.samples_used} gd_runs={res.gd_runs} "
                f"wall={wall:.3f}s")
    (out_dir / cfg.output.log_name).write_text("\n".join(log_lines) + "\n")

    for res in result.timesteps:
        if res.status == "failed":
            print(f"t={res.t:g}  FAILED: {res.error}")
        else:
            print(f"t={res.t:g}  status={res.status}  "
                  f"delta_guaranteed={res.delta_guaranteed:.6g}  "
                  f"confidence>={1.0 - res.gamma:g}  "
                  f"samples={res.samples_used}")
    print(f"result: {result_path}")
    if proj_paths:
        print(f"projections: {proj_paths[0].parent}/projection_*.csv "
              f"({len(proj_paths)} files)")
    return 0 if result.all_converged else 2


def _cmd_verify(args) -> int:
    if args.mc_samples <= 0:
        print("error: --mc-samples must be a positive integer",
              file=sys.stderr)
        return 1
    cfg = _load_config(args.config)
    doc = load_result(args.result)
    entries = [e for e in doc["timesteps"]]
    usable = [e for e in entries if e["status"] != "failed"]
    if not usable:
        print("error: result contains no usable timesteps",
              file=sys.stderr)
        return 1
    times = np.array([e["t"] for e in usable])
    sets = [reachset_of_entry(doc, e) for e in usable]
    estimates = mc_reachtube(cfg.field, doc["initial_center"],
                             doc["initial_radius"], doc["t0"], times, sets,
                             args.mc_samples, args.seed)
    all_ok = len(usable) == len(entries)
    for e in entries:
        if e["status"] == "failed":
            print(f"t={e['t']:g}  SKIPPED (timestep failed during run)")
    for e, est in zip(usable, estimates):
        delta = e["delta_guaranteed"]
        margin = delta - est.max_dist
        ok = est.max_dist <= delta
        all_ok = all_ok and ok
        verdict = "CONTAINED" if ok else "EXCEEDED"
        print(f"t={e['t']:g}  delta_guaranteed={delta:.6g}  "
              f"mc_max={est.max_dist:.6g}  margin={margin:+.3g}  "
              f"n={est.n_samples}  {verdict}")
    print("verdict: " + ("all contained" if all_ok else "containment "
                                                        "violations found"))
    return 0 if all_ok else 2


def _cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    rows = plan_reachtube(cfg.field, cfg.x0, cfg.delta0, cfg.t0, cfg.times,
                          cfg.slr)
    print(f"{'t':>10}  {'lipschitz':>12}  {'first_loss':>12}  "
          f"{'p_hit':>10}  {'max_samples':>12}")
    for row in rows:
        plan = row["plan"]
        bound = ("unbounded" if math.isinf(plan.max_samples)
                 else f"{int(plan.max_samples)}")
        print(f"{row['t']:>10.4g}  {row['lipschitz']:>12.6g}  "
              f"{row['first_loss']:>12.6g}  "
              f"{plan.hit_probability:>10.4g}  {bound:>12}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
