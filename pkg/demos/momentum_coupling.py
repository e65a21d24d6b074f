"""Why the coupling signal tracks learning progress.

Adding a small gradient g to a momentum vector m changes its norm by about
m.g/|m|.  The script shows the linear term against the exact change as g
shrinks, then runs a toy stream where the gradient first agrees with the
momentum and later turns into noise, printing the coupling signal for each
phase.

    python3 demos/momentum_coupling.py
"""
import numpy as np

from gmc.gmc_stats import GmcState, momentum_change_exact, momentum_change_first_order
from gmc.signals import gmc

rng = np.random.default_rng(0)
m = rng.normal(size=20)
print("scale      exact      linear     |error|")
for eps in (1e-1, 1e-2, 1e-3):
    g = rng.normal(size=20)
    g *= eps * np.linalg.norm(m) / np.linalg.norm(g)
    ex, lin = momentum_change_exact(m, g), momentum_change_first_order(m, g)
    print(f"{eps:7.0e}  {ex:+.3e}  {lin:+.3e}  {abs(ex - lin):.1e}")

# a consistent direction followed by zero-mean noise of the same size
state = GmcState(20, beta0=0.9, beta1=0.99)
direction = rng.normal(size=20)
for phase, make in (("aligned", lambda: direction + 0.3 * rng.normal(size=20)),
                    ("noise", lambda: 1.2 * rng.normal(size=20))):
    vals = []
    for _ in range(200):
        g = make()
        vals.append(gmc(g, state))
        state.update(g)
    print(f"{phase:8s} mean signal over last 50 steps: {np.mean(vals[-50:]):.3f}")
