"""Task selection under label noise, small enough to run in about a minute.

Four arms serve images from four groups whose labels are increasingly
randomised (none, half, two thirds, three quarters).  A loss-seeking
teacher drifts to the noisiest arm; the coupling signal spreads its samples.

    python3 demos/noise_bandit.py
"""
import numpy as np

from gmc.bandit import BanditConfig, run_bandit
from gmc.datasets import SyntheticSpec, generate_synthetic

data = generate_synthetic(SyntheticSpec(separation=2.0, samples_per_class=300))
settings = dict(mode="noise", epochs=20, batches_per_epoch=50, batch_size=128,
                actor_lr=3e-4, classifier_hidden=(64, 64), actor_hidden=(32, 32))
print("method      AUC     last-quarter allocation A..D")
for method in ("uniform", "curiosity", "gmc"):
    run = run_bandit(BanditConfig(method=method, **settings), data)
    share = run.allocation()[15:].mean(0)
    print(f"{method:10s} {run.auc():6.1f}   {np.round(share, 2)}")
