"""Command-line driver.

    reconaware run --config CONFIG [--planner gmm|heuristic180|direct] [--seed N] [--out DIR]
    reconaware compare --config CONFIG --planners gmm,heuristic180,direct [--seed N] [--out DIR]
    reconaware --version

CONFIG is either a run configuration (JSON with a "scene" entry) or a
scenario file, in which case every other setting takes its default. Set
RECONAWARE_LOG=DEBUG (or INFO, WARNING) for progress messages.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import (AllInfeasible, DegenerateCloud, EmptyRecon, EmptySurface, Infeasible, NoFeasibleGrasp,
                     NoGoalReached, NoHeadroom, NoObject, NoPlane, SamplingStalled, SingularKernel, TooFewElites)
from .evalrec import PLANNERS
from .geom import dump_json, write_ply
from .pipeline import ConfigError, ScenarioConfig, assess, execute, grasp, load_world, perceive, plan_transition

log = logging.getLogger("reconaware")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_SEGMENTATION = 4
EXIT_GRASP = 5
EXIT_PLANNING = 6
EXIT_EVALUATION = 7

ARTIFACTS = {
    "segmented": "segmented.ply",
    "surface": "surface.ply",
    "grasp": "grasp.json",
    "trajectory": "trajectory.json",
    "cem_log": "cem_log.json",
    "fused": "fused.ply",
    "metrics": "metrics.csv",
    "metrics_json": "metrics.json",
}

STAGE_ERRORS = {
    "segmentation": (EXIT_SEGMENTATION, (NoPlane, NoObject, DegenerateCloud, EmptySurface, SingularKernel)),
    "grasp": (EXIT_GRASP, (NoFeasibleGrasp,)),
    "planning": (EXIT_PLANNING, (AllInfeasible, NoGoalReached, TooFewElites, SamplingStalled, NoHeadroom,
                                 Infeasible)),
    "evaluation": (EXIT_EVALUATION, (EmptyRecon,)),
}

COMPARE_FIELDS = ("object", "planner", "status", "hausdorff_mean", "hausdorff_std", "hausdorff_max",
                  "coverage_fraction", "n_points")


class StageFailure(Exception):
    def __init__(self, stage, code, error):
        super().__init__(f"{stage} failed: {error}")
        self.stage = stage
        self.code = code
        self.error = error


class _Run:
    """Artifact bookkeeping for one run directory."""

    def __init__(self, out: Path):
        self.out = out
        self.written = {}

    def path(self, key):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / ARTIFACTS[key]
        self.written[key] = ARTIFACTS[key]
        return p

    def manifest(self, cfg, status, stage=None, message=None, extra=None):
        d = {
            "version": __version__,
            "status": status,
            "failed_stage": stage,
            "message": message,
            "planner": cfg.planner,
            "seed": cfg.seed,
            "scene": Path(cfg.scene_path).name,
            "artifacts": dict(sorted(self.written.items())),
        }
        if extra:
            d.update(extra)
        self.out.mkdir(parents=True, exist_ok=True)
        dump_json(d, self.out / "manifest.json")


def _stage(name, fn, *args, **kw):
    code, errors = STAGE_ERRORS[name]
    try:
        return fn(*args, **kw)
    except errors as e:
        raise StageFailure(name, code, e) from e


class _Shared:
    """Perception and grasp results reused across planners of one comparison."""

    def __init__(self):
        self.world = None
        self.perception = None
        self.grasp = None


def cmd_run(cfg: ScenarioConfig, shared: _Shared | None = None):
    """Run the full pipeline for one planner and write its artifacts.

    Returns ``(exit_code, report_or_None)``.
    """
    try:
        cfg.validate()
        world = shared.world if shared and shared.world else load_world(cfg)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG, None
    if shared is not None:
        shared.world = world
    out = Path(cfg.out_dir or Path("runs") / f"{world.name}_{cfg.planner}_seed{cfg.seed}")
    run = _Run(out)
    try:
        if shared and shared.perception is not None:
            per = shared.perception
        else:
            per = _stage("segmentation", perceive, world, cfg)
        write_ply(run.path("segmented"), per.segmented.points)
        per.surface.save_ply(run.path("surface"))
        if shared and shared.grasp is not None:
            gp = shared.grasp
        else:
            gp = _stage("grasp", grasp, world, per, cfg)
        if shared is not None:
            shared.perception, shared.grasp = per, gp
        gp.save_json(run.path("grasp"))
        tr = _stage("planning", plan_transition, world, per, gp, cfg)
        dump_json({"planner": tr.planner, "units": "radians",
                   "grasp": [[float(v) for v in row] for row in gp.full_trajectory()],
                   "transition": [[float(v) for v in row] for row in tr.trajectory]}, run.path("trajectory"))
        dump_json(tr.log_dict(), run.path("cem_log"))
        fused = _stage("evaluation", execute, world, tr, cfg)
        fused.save_ply(run.path("fused"))
        report = _stage("evaluation", assess, world, fused, cfg)
        report.save_csv(run.path("metrics"))
        report.save_json(run.path("metrics_json"))
    except StageFailure as f:
        log.error("%s", f)
        run.manifest(cfg, "failed", f.stage, str(f.error))
        return f.code, None
    run.manifest(cfg, "ok")
    return EXIT_OK, report


def cmd_compare(cfg: ScenarioConfig, planners, out_dir=None):
    """Run several planners with shared seeds; one CSV row per planner. Returns the rows."""
    planners = list(planners)
    if len(planners) < 2:
        raise ConfigError("compare needs at least two planners")
    for p in planners:
        if p not in PLANNERS:
            raise ConfigError(f"unknown planner {p!r}")
    base = Path(out_dir or cfg.out_dir or Path("runs") / f"compare_seed{cfg.seed}")
    shared = _Shared()
    rows = []
    name = None
    for p in planners:
        c = replace(cfg, planner=p, out_dir=base / p)
        code, rep = cmd_run(c, shared)
        if code == EXIT_CONFIG:
            raise ConfigError("invalid configuration")
        name = shared.world.name if shared.world else Path(cfg.scene_path).stem
        row = {"object": name, "planner": p, "status": "ok" if code == EXIT_OK else f"failed({code})"}
        for k in COMPARE_FIELDS[3:]:
            row[k] = "" if rep is None else getattr(rep, k)
        rows.append(row)
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, COMPARE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def _load(args):
    cfg = ScenarioConfig.from_file(args.config)
    kw = {}
    if getattr(args, "planner", None):
        kw["planner"] = args.planner
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out_dir"] = Path(args.out)
    return replace(cfg, **kw) if kw else cfg


def build_parser():
    ap = argparse.ArgumentParser(prog="reconaware", description="Reconstruction-aware transition planning.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the full pipeline for one planner")
    r.add_argument("--config", required=True)
    r.add_argument("--planner", choices=PLANNERS)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    c = sub.add_parser("compare", help="run several planners with shared seeds")
    c.add_argument("--config", required=True)
    c.add_argument("--planners", required=True, help="comma separated, e.g. gmm,heuristic180,direct")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    return ap


def main(argv=None):
    level = os.environ.get("RECONAWARE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    if args.command == "run":
        code, rep = cmd_run(cfg)
        if rep is not None:
            print(f"{rep.planner_id}: hausdorff mean {rep.hausdorff_mean:.6f} m, coverage {rep.coverage_fraction:.3f}")
        return code
    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    try:
        rows = cmd_compare(cfg, planners, args.out)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    for r in rows:
        print(f"{r['object']},{r['planner']},{r['status']},{r['hausdorff_mean']},{r['coverage_fraction']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
