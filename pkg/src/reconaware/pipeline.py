"""End-to-end run: perceive, grasp, plan a transition, execute, evaluate."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .arm import ArmModel, load_arm
from .cem import CemConfig, ReconPlan, TransitionConstraints, plan_reconstruction_aware, raycast_indices
from .evalrec import PLANNERS, FusedCloud, ReconReport, evaluate, execute_and_fuse, plan_direct, plan_heuristic180
from .geom import PointCloud
from .gpis import GpisHyper, GpisModel, SurfaceSet, extract_surface, fit_object
from .grasp import GraspPlan, grasp_transform, plan_grasp
from .scene import (CLUSTER_TOL, RANSAC_ITERATIONS, RANSAC_THRESHOLD, Scene, cluster_object, downsample_to,
                    render_depth, scene_from_dict, segment_table)
from .sdf import CameraModel

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
STREAMS = {"render": 1, "ransac": 2, "grasp": 3, "cem-goals": 4, "cem-sampling": 5, "eval": 6}


class ConfigError(ValueError):
    pass


def substream(master: int, name: str) -> int:
    """Seed for a named stage derived from the master seed."""
    return int(np.random.default_rng([int(master), STREAMS[name]]).integers(2 ** 31))


def bundled_scenario(name: str) -> Path:
    return DATA_DIR / f"scenario_{name}.json"


@dataclass
class GpisSettings:
    signal_sigma: float = 1.0
    length_scale: float = 0.04
    noise: float = 0.06
    eta: float = 0.1
    resolution: float = 0.01
    shell_margin: float = 2.0
    shell_spacing: float = 1.0
    max_train_points: int = 300

    def hyper(self):
        return GpisHyper(self.signal_sigma, self.length_scale, self.noise, self.eta)


@dataclass
class ScenarioConfig:
    """Everything a run needs. Paths are absolute once loaded."""

    scene_path: Path
    arm_path: Optional[Path] = None
    planner: str = "gmm"
    seed: int = 0
    out_dir: Optional[Path] = None
    gpis: GpisSettings = field(default_factory=GpisSettings)
    cem: CemConfig = field(default_factory=CemConfig)
    grasp_horizon: int = 10
    grasp_weight: float = 0.5
    sensor_noise: float = 0.001
    render_rows: int = 160
    render_cols: int = 160
    fusion_voxel: float = 0.002
    coverage_radius: float = 0.005
    coverage_samples: int = 10000

    def __post_init__(self):
        self.scene_path = Path(self.scene_path)
        if self.arm_path is not None:
            self.arm_path = Path(self.arm_path)
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    def validate(self):
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {', '.join(PLANNERS)}")
        if not self.scene_path.is_file():
            raise ConfigError(f"scene file not found: {self.scene_path}")
        if self.arm_path is not None and not self.arm_path.is_file():
            raise ConfigError(f"arm file not found: {self.arm_path}")
        if self.grasp_horizon < 2:
            raise ConfigError("grasp_horizon must be at least 2")
        if self.grasp_weight <= 0:
            raise ConfigError("grasp_weight must be positive")
        if self.sensor_noise < 0 or self.fusion_voxel < 0 or self.coverage_radius <= 0:
            raise ConfigError("noise and voxel sizes must be non-negative, coverage radius positive")
        if self.coverage_samples < 100:
            raise ConfigError("coverage_samples must be at least 100")
        if self.render_rows < 2 or self.render_cols < 2:
            raise ConfigError("render resolution must be at least 2x2")
        g = self.gpis
        if g.resolution <= 0 or g.max_train_points < 10:
            raise ConfigError("gpis resolution must be positive and max_train_points at least 10")
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scene_path"] = str(self.scene_path)
        d["arm_path"] = None if self.arm_path is None else str(self.arm_path)
        d["out_dir"] = None if self.out_dir is None else str(self.out_dir)
        d["gpis"] = dict(self.gpis.__dict__)
        d["cem"] = self.cem.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, base_dir="."):
        """Build from a run-config mapping, or from a scenario mapping (defaults everywhere else)."""
        base = Path(base_dir)
        try:
            if "object" in d and "camera" in d:
                raise ConfigError("scenario mappings must be loaded with from_file")
            d = dict(d)
            scene = d.pop("scene")
            kw = {"scene_path": _resolve(base, scene)}
            if d.get("arm") is not None:
                kw["arm_path"] = _resolve(base, d.pop("arm"))
            d.pop("arm", None)
            if "out" in d:
                kw["out_dir"] = _resolve(base, d.pop("out"))
            if "gpis" in d:
                kw["gpis"] = GpisSettings(**d.pop("gpis"))
            if "cem" in d:
                kw["cem"] = CemConfig(**d.pop("cem"))
            allowed = {f.name for f in fields(cls)}
            unknown = set(d) - allowed
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            kw.update(d)
            return cls(**kw)
        except (TypeError, KeyError) as e:
            raise ConfigError(f"bad config: {e}") from e
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if "object" in d and "camera" in d:
            return cls(scene_path=path.resolve())
        return cls.from_dict(d, path.parent)


def _resolve(base, p):
    p = Path(p)
    if p.is_absolute():
        return p
    cand = (base / p).resolve()
    if not cand.exists() and (DATA_DIR / p).exists():
        return DATA_DIR / p
    return cand


@dataclass
class World:
    name: str
    scene: Scene
    camera: CameraModel
    render_camera: CameraModel
    arm: ArmModel
    start: np.ndarray


def load_world(cfg: ScenarioConfig) -> World:
    try:
        raw = json.loads(cfg.scene_path.read_text())
        scene, camera = scene_from_dict(raw, cfg.scene_path.parent)
        arm_path = cfg.arm_path or _resolve(cfg.scene_path.parent, raw["arm"])
        if not Path(arm_path).is_file():
            raise ConfigError(f"arm file not found: {arm_path}")
        arm = load_arm(arm_path)
        start = np.asarray(raw["start_joints"], dtype=float)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"bad scenario file: {e}") from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"bad scenario: {e}") from e
    if start.shape != (7,) or np.any(start < arm.lower) or np.any(start > arm.upper):
        raise ConfigError("start_joints must be 7 values within the joint limits")
    cam_raw = raw["camera"]
    rows = int(cam_raw.get("render_rows", cfg.render_rows))
    cols = int(cam_raw.get("render_cols", cfg.render_cols))
    return World(raw.get("name", cfg.scene_path.stem), scene, camera, camera.with_beam(rows, cols), arm, start)


@dataclass
class Perception:
    segmented: PointCloud
    train_points: np.ndarray
    gpis: GpisModel
    surface: SurfaceSet


def perceive(world: World, cfg: ScenarioConfig) -> Perception:
    """Single depth frame -> table removal -> largest cluster -> implicit surface."""
    frame = render_depth(world.scene, world.render_camera, cfg.sensor_noise, substream(cfg.seed, "render"))
    _, inliers = segment_table(frame, RANSAC_THRESHOLD, RANSAC_ITERATIONS, substream(cfg.seed, "ransac"))
    obj = cluster_object(frame, inliers, CLUSTER_TOL)
    train, _ = downsample_to(obj.points, cfg.gpis.max_train_points)
    g = cfg.gpis
    model, shell = fit_object(train, g.hyper(), g.shell_margin, g.shell_spacing)
    surface = extract_surface(model, shell, resolution=g.resolution, pad=0.0)
    return Perception(obj, train, model, surface)


def grasp(world: World, per: Perception, cfg: ScenarioConfig) -> GraspPlan:
    return plan_grasp(world.arm, per.gpis, per.surface, None, world.start, cfg.grasp_horizon,
                      table=world.scene.table, p_g=cfg.grasp_weight, seed=substream(cfg.seed, "grasp"))


def transition_constraints(world: World, plan: GraspPlan) -> TransitionConstraints:
    gtf = grasp_transform(world.arm, plan.final_configuration)
    return TransitionConstraints(world.arm, world.camera, gtf, plan.target_pose.position, world.scene.table)


@dataclass
class Transition:
    planner: str
    trajectory: np.ndarray
    grasp_tf: np.ndarray
    recon: Optional[ReconPlan] = None
    visible: Optional[np.ndarray] = None

    def log_dict(self):
        d = {"planner": self.planner}
        if self.recon is not None:
            d.update(self.recon.log_dict())
        else:
            d.update({"iterations": [], "convergence_reason": None, "converged": None,
                      "trajectory": [[float(v) for v in row] for row in self.trajectory]})
        d["visible_points"] = None if self.visible is None else int(len(self.visible))
        return d


def plan_transition(world: World, per: Perception, plan: GraspPlan, cfg: ScenarioConfig, planner=None) -> Transition:
    planner = planner or cfg.planner
    cons = transition_constraints(world, plan)
    q_grasp = plan.final_configuration
    goal = world.scene.goal_pose
    M = cfg.cem.length
    if planner == "gmm":
        rp = plan_reconstruction_aware(world.arm, per.surface, per.gpis, world.camera, cons, goal, q_grasp,
                                       cons.grasp_tf, cfg.cem, goal_seed=substream(cfg.seed, "cem-goals"),
                                       sample_seed=substream(cfg.seed, "cem-sampling"))
        traj = rp.trajectory
    elif planner == "direct":
        rp = None
        traj = plan_direct(world.arm, goal, q_grasp, cons, M)
    elif planner == "heuristic180":
        rp = None
        traj = plan_heuristic180(world.arm, goal, q_grasp, cons, M)
    else:
        raise ConfigError(f"unknown planner {planner!r}")
    vis = raycast_indices(per.surface, per.gpis, world.camera, traj, world.arm, cons.grasp_tf)
    return Transition(planner, traj, cons.grasp_tf, rp, vis)


def execute(world: World, tr: Transition, cfg: ScenarioConfig) -> FusedCloud:
    return execute_and_fuse(world.scene, world.render_camera, world.arm, tr.trajectory, tr.grasp_tf,
                            cfg.sensor_noise, substream(cfg.seed, "eval"), cfg.fusion_voxel)


def assess(world: World, fused: FusedCloud, cfg: ScenarioConfig, planner=None) -> ReconReport:
    truth = world.scene.object_world_mesh()
    return evaluate(fused.points, truth, planner or cfg.planner, cfg.coverage_radius, cfg.coverage_samples,
                    substream(cfg.seed, "eval"))


def with_planner(cfg: ScenarioConfig, planner: str) -> ScenarioConfig:
    return replace(cfg, planner=planner)
