"""One local trajectory optimisation on a partly explored map.

The belief is seeded by sensing along a short straight pass, a few coral
candidates are flagged ahead of the robot, and the optimiser plans a 20 s
horizon toward a target, then prints the cost breakdown of the result.
"""
from __future__ import annotations

import numpy as np

from himos.belief import BeliefState, CandidateMap, update_scout_arrays
from himos.local_planner import LocalPlannerConfig, optimize_trajectory
from himos.sensors import FLC_DEFAULT, FLS_DEFAULT, RobotState, sample_scout_arrays
from himos.world import MapGenConfig, generate_map

rng = np.random.default_rng(3)
gt = generate_map(MapGenConfig(seed=3, difficulty="medium", width_m=20.0, height_m=20.0))
belief = BeliefState(gt.spec)
for x in np.arange(2.0, 8.0, 0.5):
    pose = RobotState(x, 10.0, 0.0)
    for sensor in (FLS_DEFAULT, FLC_DEFAULT):
        update_scout_arrays(belief, *sample_scout_arrays(gt, pose, sensor, rng), sensor)

flags = np.zeros(gt.spec.n_cells, bool)
flags[np.argsort(belief.ell_c)[-6:]] = True  # most coral-like cells become candidates
start = RobotState(8.0, 10.0, 0.0)
cfg = LocalPlannerConfig()
plan = optimize_trajectory(start, belief, CandidateMap(flags), target=(16.0, 12.0), t_local=20.0, cfg=cfg)

print(f"horizon {plan.H} steps, {plan.iterations} iterations, converged {plan.converged}, "
      f"{plan.solve_time * 1e3:.0f} ms")
for name, value in plan.terms.items():
    print(f"  {name:>12}: {value:9.4f}")
end = plan.state(plan.H)
print(f"final pose ({end.x:.2f}, {end.y:.2f}, {end.theta:.2f})")
