"""Regenerate the bundled meshes, arm description and scenario files."""

import json
from pathlib import Path

import numpy as np

from reconaware.arm import default_arm, solve_ik
from reconaware.geom import Pose6, write_ply
from reconaware.scene import box_mesh, icosphere, prism_mesh

DATA = Path(__file__).resolve().parents[1] / "src" / "reconaware" / "data"

TABLE = {"center": [0.8, 0.0, -0.15], "half_extents": [0.5, 0.6, 0.05]}
TABLE_TOP = -0.1
CAMERA = {"eye": [1.45, 0.0, 0.40], "target": [0.7, 0.0, -0.05], "half_angle": 0.45,
          "near": 0.3, "far": 1.6, "rows": 48, "cols": 48, "render_rows": 160, "render_cols": 160}
GOAL = {"position": [0.75, 0.2, 0.12], "rpy": [np.pi, 0.0, 0.0]}


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    arm = default_arm()
    (DATA / "arm_baxterlike.json").write_text(json.dumps(arm.to_dict(), indent=2) + "\n")
    start, err = solve_ik(arm, Pose6([0.45, -0.3, 0.2], [np.pi, 0.0, 0.0]),
                          np.array([0.1, -0.5, 0.1, 1.2, 0.1, 0.8, 0.1]))
    assert err < 1e-4, err

    objects = {
        "sphere": (icosphere(0.045, 3), 0.045),
        "box": (box_mesh([0.14, 0.06, 0.08]), 0.04),
        "tallbox": (box_mesh([0.07, 0.05, 0.16]), 0.08),
        "lprism": (prism_mesh([[-0.06, -0.05], [0.06, -0.05], [0.06, -0.01], [-0.02, -0.01],
                               [-0.02, 0.05], [-0.06, 0.05]], 0.06), 0.03),
    }
    for name, (mesh, half_height) in objects.items():
        write_ply(DATA / f"{name}.ply", mesh.vertices, mesh.faces)
        scenario = {
            "name": name,
            "object": {"mesh": f"{name}.ply",
                       "pose": {"position": [0.65, 0.0, TABLE_TOP + half_height], "rpy": [0.0, 0.0, 0.0]}},
            "table": TABLE,
            "camera": CAMERA,
            "goal": GOAL,
            "arm": "arm_baxterlike.json",
            "start_joints": [round(float(v), 6) for v in start],
        }
        (DATA / f"scenario_{name}.json").write_text(json.dumps(scenario, indent=2) + "\n")


if __name__ == "__main__":
    main()
