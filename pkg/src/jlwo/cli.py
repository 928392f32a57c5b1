"""Command-line entry point: optimize, simulate, validate and sweep.

Every CSV row carries the seed and config digest that produced it, numbers
are written with round-trip precision and no wall-clock values, so rerunning
the same config and seed reproduces the files byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .config import (ExperimentConfig, apply_sweep_value, atomic_write_text, load_config,
                     load_design, save_design)
from .latency import latency_report
from .model import validate_design
from .optimizer import STAGES, jlwo_run
from .simulator import simulate, validate_bound

log = logging.getLogger("jlwo")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

_INFEASIBLE = (errors.InfeasibleInitialization, errors.NoFeasibleWeights, errors.NoFeasibleSchedule,
               errors.NoPerfectMatching, errors.UnstableQueue, errors.InvalidDesign,
               errors.PortCapacityExceeded, errors.NegativeResidualBandwidth, errors.BadMarginals)


@dataclass
class RunReport:
    digest: str
    seed: int
    trace_summary: dict | None = None
    latency: object = None
    simulation: object = None
    validation: object = None
    rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _seed(cfg: ExperimentConfig) -> int:
    return cfg.sim.seed


def _trace_rows(trace, cfg):
    rows = []
    for t, obj in enumerate(trace.objective):
        dec = trace.deltas[t - 1] if t > 0 else {}
        rows.append([t, obj] + [dec.get(s, 0.0) for s in STAGES] + [_seed(cfg), cfg.digest])
    return rows


def _optimize(cfg, out):
    design, trace = jlwo_run(cfg.topology, cfg.workload, cfg=cfg.opt)
    files = {"design": os.path.join(out, "design.json"), "trace": os.path.join(out, "trace.csv")}
    save_design(files["design"], cfg.workload, design)
    write_csv(files["trace"], ["iteration", "objective"] + [f"decrease_{s}" for s in STAGES]
              + ["seed", "config_digest"], _trace_rows(trace, cfg))
    summary = {"iterations": trace.iterations, "final_objective": trace.objective[-1],
               "termination": trace.termination_reason, "monotone": trace.is_monotone(),
               "seconds": float(sum(trace.wall_times))}
    return design, trace, summary, files


def run_optimize(cfg: ExperimentConfig, out) -> RunReport:
    design, _, summary, files = _optimize(cfg, out)
    rep = latency_report(cfg.topology, cfg.workload, design)
    rows = [[d, cfg.workload.classes.weights[d], rep.per_class_means[d], rep.per_class_conditional[d],
             _seed(cfg), cfg.digest] for d in range(cfg.workload.num_classes)]
    files["bounds"] = os.path.join(out, "bounds.csv")
    write_csv(files["bounds"], ["class", "class_weight", "weighted_bound_s", "class_bound_s",
                                "seed", "config_digest"], rows)
    return RunReport(cfg.digest, _seed(cfg), summary, rep, rows=rows, files=files)


def _sim_rows(res, cfg):
    return [[d, res.per_class_mean[d], res.per_class_half_width[d], res.per_class_count[d],
             cfg.sim.metrics_mode, _seed(cfg), cfg.digest] for d in range(len(res.per_class_mean))]


def run_simulate(cfg: ExperimentConfig, design_path, out, records=False) -> RunReport:
    design = load_design(design_path)
    res = simulate(cfg.topology, cfg.workload, design, cfg.sim)
    files = {"simulation": os.path.join(out, "simulation.csv")}
    rows = _sim_rows(res, cfg)
    write_csv(files["simulation"], ["class", "empirical_mean_s", "ci95_half_width_s", "completions",
                                    "metrics_mode", "seed", "config_digest"], rows)
    if records:
        files["records"] = os.path.join(out, "records.csv")
        tmp = files["records"] + ".partial"
        res.write_records(tmp)
        os.replace(tmp, files["records"])
    return RunReport(cfg.digest, _seed(cfg), simulation=res, rows=rows, files=files)


def _validation_rows(bv, cfg, prefix=()):
    return [list(prefix) + [d, c.bound, c.empirical_mean, c.half_width, c.slack, c.holds,
                            _seed(cfg), cfg.digest]
            for d, c in enumerate(bv.classes)]


_VALIDATION_HEADER = ["class", "bound_s", "empirical_mean_s", "ci95_half_width_s", "slack_s",
                      "bound_holds", "seed", "config_digest"]


def run_validate(cfg: ExperimentConfig, out) -> RunReport:
    design, _, summary, files = _optimize(cfg, out)
    bv = validate_bound(cfg.topology, cfg.workload, design, cfg.sim)
    rows = _validation_rows(bv, cfg)
    files["validation"] = os.path.join(out, "validation.csv")
    write_csv(files["validation"], _VALIDATION_HEADER, rows)
    return RunReport(cfg.digest, _seed(cfg), summary, simulation=bv.result, validation=bv,
                     rows=rows, files=files)


def run_sweep(cfg: ExperimentConfig, out) -> RunReport:
    """Re-optimise from the base design at every sweep value, then validate."""
    if cfg.sweep is None:
        raise errors.SchemaError("config has no sweep section", "sweep")
    base, _ = jlwo_run(cfg.topology, cfg.workload, cfg=cfg.opt)
    rows = []
    for value in cfg.sweep.values:
        point = apply_sweep_value(cfg, cfg.sweep.parameter, value)
        init = base if not validate_design(point.topology, point.workload, base, cfg.opt.rho_max) else None
        design, _ = jlwo_run(point.topology, point.workload, init=init, cfg=cfg.opt)
        bv = validate_bound(point.topology, point.workload, design, cfg.sim)
        rows += _validation_rows(bv, cfg, (cfg.sweep.parameter, value))
    files = {"sweep": os.path.join(out, "sweep.csv")}
    write_csv(files["sweep"], ["parameter", "value"] + _VALIDATION_HEADER, rows)
    return RunReport(cfg.digest, _seed(cfg), rows=rows, files=files)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jlwo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("optimize", "run the joint optimisation and save the design"),
                           ("simulate", "simulate a saved design"),
                           ("validate", "optimise, simulate and compare with the bound"),
                           ("sweep", "validate at every value of the configured sweep")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", default="results", help="output directory")
        s.add_argument("--seed", type=int, help="seed for optimizer and simulator")
        s.add_argument("--mode", choices=("waiting", "sojourn"), help="simulated latency metric")
        s.add_argument("--intra-residual", choices=("as-written", "sum"),
                       help="ToR residual bandwidth convention")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            s.add_argument("--design", required=True, help="design JSON written by optimize")
            s.add_argument("--records", action="store_true", help="also write per-request records.csv")
    return p


def _dispatch(args) -> RunReport:
    cfg = load_config(args.config).with_overrides(args.seed, args.mode, args.intra_residual)
    if args.command == "optimize":
        return run_optimize(cfg, args.out)
    if args.command == "simulate":
        return run_simulate(cfg, args.design, args.out, args.records)
    if args.command == "validate":
        return run_validate(cfg, args.out)
    return run_sweep(cfg, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", errors.HorizonTooShort)
            report = _dispatch(args)
    except (errors.ParseError, errors.SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _INFEASIBLE as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (errors.JLWOError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"config {report.digest} seed {report.seed}")
    if report.trace_summary:
        t = report.trace_summary
        print(f"optimizer: {t['iterations']} iterations, objective {t['final_objective']:.6g}, "
              f"{t['termination']}, {t['seconds']:.2f} s")
    for name, path in report.files.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
