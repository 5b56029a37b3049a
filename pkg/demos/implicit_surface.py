"""From one depth frame to an implicit surface with uncertainty.

Renders the bundled scenario once, removes the table, keeps the largest
cluster and fits a Gaussian process implicit surface to it. Then it asks
how much the camera would learn from different parts of the estimate:
points on the side facing the camera are already explained by the training
data, points on the hidden side are not.

    python demos/implicit_surface.py [scenario]   # sphere, box, tallbox, lprism
"""

import sys

import numpy as np

from reconaware.gpis import conditional_entropy
from reconaware.pipeline import ScenarioConfig, bundled_scenario, load_world, perceive


def main(name="box"):
    cfg = ScenarioConfig(bundled_scenario(name)).validate()
    world = load_world(cfg)
    per = perceive(world, cfg)
    print(f"scenario {world.name}: {len(per.segmented)} object points after segmentation, "
          f"{len(per.train_points)} kept for training")

    s = per.surface
    print(f"estimated surface: {len(s)} grid points with |mean| <= eta, spacing {s.spacing * 1000:.0f} mm")
    print(f"posterior variance on the estimate: min {s.var.min():.3f}, median {np.median(s.var):.3f}, "
          f"max {s.var.max():.3f}")

    # split the estimate by which way it faces relative to the camera
    eye = world.camera.pose.position
    c = s.points.mean(axis=0)
    facing = (s.points - c) @ (eye - c) > 0
    front, back = s.points[facing], s.points[~facing]
    n = min(len(front), len(back), 200)
    rng = np.random.default_rng(0)
    h_front = conditional_entropy(per.gpis, front[rng.choice(len(front), n, replace=False)])
    h_back = conditional_entropy(per.gpis, back[rng.choice(len(back), n, replace=False)])
    print(f"conditional entropy of {n} points facing the camera: {h_front:8.2f}")
    print(f"conditional entropy of {n} points facing away:       {h_back:8.2f}")
    print("the hidden side carries more uncertainty, which is what the transition planner goes looking for")


if __name__ == "__main__":
    main(*sys.argv[1:])
