"""Command-line entry point.

    dyngt run --config experiment.json
    dyngt preset --name fig3 [--trajectories N] [--seed S] [--out DIR]
    dyngt costs --p-min 1e-3 --p-max 1e-1 --points 50 --a 1.3 --alpha 2
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, ExperimentConfig, parse_config, preset
from .engine import DAY_COLUMNS, Dorfman, run_batch
from .horizon import (
    default_s_max,
    expected_total_tests,
    make_plan,
    optimize_backward,
    optimize_backward_continuous,
    static_plan,
    static_plan_continuous,
)
from .objectives import CostParams, cost_table

log = logging.getLogger("dyngt")

COST_COLUMNS = (
    "p",
    "s_test_only",
    "s_combined",
    "test_cost_pp",
    "quarantine_cost_pp",
    "test_cost_pp_test_only",
    "quarantine_cost_pp_test_only",
)
PLAN_COLUMNS = ("d", "s_d", "expected_pipeline", "expected_tests")


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")


def write_costs(out: Path, p_min: float, p_max: float, points: int, params: CostParams) -> list:
    rows = cost_table(np.logspace(np.log10(p_min), np.log10(p_max), points), params)
    write_csv(out / "costs.csv", COST_COLUMNS, rows)
    return rows


def _aggregate_rows(trajs) -> list[dict]:
    keys = DAY_COLUMNS[1:]
    stacked = {k: np.mean([getattr(m, k) for m in trajs], axis=0) for k in keys}
    return [
        {"day": d + 1, **{k: float(stacked[k][d]) for k in keys}}
        for d in range(trajs[0].horizon)
    ]


def _horizon_comparison(cfg: ExperimentConfig, out: Path) -> dict:
    s_max = default_s_max(cfg.p, cfg.N)
    horizon = optimize_backward(cfg.p, cfg.t, s_max, cfg.N)
    static = make_plan(cfg.N, cfg.p, static_plan(cfg.p, cfg.t, s_max))
    write_csv(out / "plan_horizon.csv", PLAN_COLUMNS, horizon.rows())
    write_csv(out / "plan_static.csv", PLAN_COLUMNS, static.rows())
    cont = optimize_backward_continuous(cfg.p, cfg.t, s_max)
    static_cont = static_plan_continuous(cfg.p, cfg.t, s_max)
    return {
        "horizon_sizes": [int(s) for s in horizon.group_sizes],
        "static_size": int(static.group_sizes[0]),
        "expected_tests_horizon": horizon.expected_total_tests,
        "expected_tests_static": static.expected_total_tests,
        "expected_tests_horizon_continuous": expected_total_tests(cfg.N, cfg.p, cont),
        "expected_tests_static_continuous": expected_total_tests(cfg.N, cfg.p, static_cont),
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run a configured experiment and write its CSV/JSON outputs; returns the summary."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())

    if cfg.preset == "fig1":
        rows = write_costs(out, 1e-3, 1e-1, 50, CostParams(cfg.a, cfg.alpha))
        summary = {"points": len(rows), "a": cfg.a, "alpha": cfg.alpha}
        write_json(out / "summary.json", summary)
        return summary

    model, protocol = cfg.build_model(), cfg.build_protocol()
    summary, trajs = run_batch(model, protocol, cfg.t, cfg.trajectories, cfg.seed)
    result = summary.to_dict()
    if cfg.per_trajectory:
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        for m in trajs:
            write_csv(tdir / f"traj_{m.seed}.csv", DAY_COLUMNS, m.rows())
    else:
        write_csv(out / "days.csv", DAY_COLUMNS, _aggregate_rows(trajs))

    if cfg.model == "iid" and cfg.protocol == "dorfman":
        result["plans"] = _horizon_comparison(cfg, out)
    if cfg.preset in ("fig6", "fig7"):
        # the figures compare against Dorfman with horizon-optimized sizes
        dorf, dtrajs = run_batch(model, Dorfman(), cfg.t, cfg.trajectories, cfg.seed)
        write_csv(out / "days_dorfman.csv", DAY_COLUMNS, _aggregate_rows(dtrajs))
        result["dorfman"] = dorf.to_dict()
        result["max_undetected_gt2"] = int(max(m.undetected_gt2.max() for m in trajs))
    write_json(out / "summary.json", result)
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyngt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")

    pre = sub.add_parser("preset", help="run a named figure preset")
    pre.add_argument("--name", required=True, choices=sorted(PRESETS))
    pre.add_argument("--trajectories", type=int)
    pre.add_argument("--seed", type=int)
    pre.add_argument("--out")
    pre.add_argument("--per-trajectory", action="store_true")

    costs = sub.add_parser("costs", help="optimal group sizes and costs over a prevalence grid")
    costs.add_argument("--p-min", type=float, default=1e-3)
    costs.add_argument("--p-max", type=float, default=1e-1)
    costs.add_argument("--points", type=int, default=50)
    costs.add_argument("--a", type=float, default=1.3)
    costs.add_argument("--alpha", type=float, default=2.0)
    costs.add_argument("--out", default="out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s"
    )
    try:
        if args.command == "costs":
            if not 0 < args.p_min <= args.p_max <= 1 or args.points < 1:
                raise ConfigError("need 0 < p-min <= p-max <= 1 and points >= 1")
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_costs(out, args.p_min, args.p_max, args.points, CostParams(args.a, args.alpha))
            log.info("wrote %s", out / "costs.csv")
            return 0
        if args.command == "run":
            cfg = parse_config(args.config)
        else:
            cfg = preset(args.name)
            overrides = {
                k: v
                for k, v in (
                    ("trajectories", args.trajectories),
                    ("seed", args.seed),
                    ("out", args.out),
                )
                if v is not None
            }
            if args.per_trajectory:
                overrides["per_trajectory"] = True
            cfg = replace(cfg, **overrides)
        summary = run_experiment(cfg, args.out)
        log.info(json.dumps(summary, indent=2))
        return 0
    except (ConfigError, ValueError) as exc:
        log.error("error: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
