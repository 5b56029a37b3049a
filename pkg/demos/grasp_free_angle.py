"""Grasping with one free Euler angle.

The grasp planner matches the gripper to the estimated object's principal
axes in two of the three Euler angles and leaves the third free. Each
choice of free angle is a separate constrained solve; the cheapest feasible
one wins. A flat box and a tall box end up with different choices.

    python demos/grasp_free_angle.py
"""

import numpy as np

from reconaware.arm import jaw_midpoint
from reconaware.pipeline import ScenarioConfig, bundled_scenario, grasp, load_world, perceive


def main():
    for name in ("box", "tallbox"):
        cfg = ScenarioConfig(bundled_scenario(name)).validate()
        world = load_world(cfg)
        per = perceive(world, cfg)
        plan = grasp(world, per, cfg)
        print(f"\n{name}: target at {np.round(plan.target_pose.position, 3)}")
        for c in plan.candidates:
            mark = "<-" if c.free_angle_index == plan.free_angle_index else ""
            print(f"  free angle {c.free_angle_index}: cost {c.cost:10.3e}  feasible {str(c.feasible):5s} {mark}")
        reach = np.linalg.norm(jaw_midpoint(world.arm, plan.final_configuration).position
                               - plan.target_pose.position)
        print(f"  jaw midpoint ends {reach * 1000:.1f} mm from the target")


if __name__ == "__main__":
    main()
