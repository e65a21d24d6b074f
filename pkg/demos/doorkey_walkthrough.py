"""Walk the planner's route through one DoorKey layout, with and without
the noisy observation channel near the door.

    python3 demos/doorkey_walkthrough.py [seed]
"""
import sys

import numpy as np

from gmc.gridworld import ACTION_NAMES, DoorKeyEnv, plan

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
clean, noisy = DoorKeyEnv(size=6, seed=seed), DoorKeyEnv(size=6, door_noise=True, seed=seed)
clean.reset()
noisy.reset()
route = plan(clean.layout, clean.state)
print(f"layout {seed}: door at {clean.layout.door}, goal at {clean.layout.goal}")
print(f"shortest route: {len(route)} actions")
for t, a in enumerate(route):
    rc, rn = clean.step(a), noisy.step(a)
    spread = float(np.std(rn.observation[..., 3]))
    print(f"{t:3d} {ACTION_NAMES[a]:8s} pos=({clean.state.x},{clean.state.y}) "
          f"reward={rc.reward:.3f} noise channel std={spread:.2f}")
print("same rewards in both worlds:", rc.reward == rn.reward)
