"""Training loop for the task-selection experiments.

Each batch: the actor picks ``batch_size`` arms, the environment serves one
labelled image per pick, the classifier takes one Adam step on the batch
and the per-sample intrinsic rewards (computed from the classifier's
gradients *before* the GMC statistics absorb this batch) drive one policy
update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import RunMetrics, test_loss
from .bandit_env import GROUPS, BanditEnv, Mode
from .datasets import N_CLASSES, LabeledSet, SyntheticSpec, generate_synthetic
from .gmc_stats import GmcState
from .selection_policy import Actor, ActorConfig
from .signals import LossWindow, SignalConfig, SignalKind, batch_rewards
from .tensor_nn import Adam, Mlp, MlpSpec, cross_entropy, cross_entropy_grad

GMC_KINDS = (SignalKind.GMC, SignalKind.GMC_DOT_PRODUCT, SignalKind.GMC_COSINE)


@dataclass
class BanditConfig:
    mode: Mode = Mode.NOISE
    method: SignalKind = SignalKind.GMC
    seed: int = 0
    epochs: int = 100
    batches_per_epoch: int | None = None  # None: one pass over the dataset
    batch_size: int = 256
    eval_per_arm: int = 100
    action_space: str | None = None  # None: the one the mode requires

    classifier_hidden: tuple[int, ...] = (256, 256)
    classifier_lr: float = 1e-3
    classifier_betas: tuple[float, float] = (0.9, 0.999)

    actor_hidden: tuple[int, ...] = (256, 256)
    actor_lr: float = 1e-5
    actor_betas: tuple[float, float] = (0.99, 0.999)
    entropy_weight: float = 0.05

    gmc_beta0: float = 0.999
    gmc_beta1: float = 0.999
    gmc_epsilon: float = 1e-8
    gmc_bias_correction: bool = False
    signal: SignalConfig = field(default_factory=SignalConfig)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.method = SignalKind.parse(self.method) if isinstance(self.method, str) else self.method


def _batches_per_epoch(cfg: BanditConfig, n: int) -> int:
    return cfg.batches_per_epoch or max(1, math.ceil(n / cfg.batch_size))


def run_bandit(cfg: BanditConfig, data: LabeledSet | None = None,
               progress=None) -> RunMetrics:
    """Run one seed; returns per-epoch group test losses and visit counts."""
    data = data if data is not None else generate_synthetic(SyntheticSpec())
    ss = np.random.SeedSequence(cfg.seed)
    clf_seed, actor_seed, act_seed = ss.spawn(3)

    env = BanditEnv(data, cfg.mode, seed=cfg.seed, action_space=cfg.action_space)
    clf = Mlp(MlpSpec(data.input_dim, list(cfg.classifier_hidden), N_CLASSES),
              np.random.default_rng(clf_seed))
    clf_opt = Adam(clf.params, lr=cfg.classifier_lr, betas=cfg.classifier_betas)
    actor = Actor(ActorConfig(env.n_actions, cfg.actor_hidden, cfg.entropy_weight,
                              cfg.actor_lr, cfg.actor_betas),
                  np.random.default_rng(actor_seed))
    act_rng = np.random.default_rng(act_seed)

    sig = SignalConfig(**{**cfg.signal.__dict__, "kind": cfg.method})
    state = None
    if cfg.method in GMC_KINDS:
        state = GmcState(len(clf.params), cfg.gmc_beta0, cfg.gmc_beta1,
                         cfg.gmc_epsilon, cfg.gmc_bias_correction)
    window = LossWindow(len(GROUPS), sig.window)
    eval_x, eval_t, eval_g = env.eval_set(cfg.eval_per_arm, seed=cfg.seed)

    n_batches = _batches_per_epoch(cfg, len(data))
    losses_log = np.zeros((cfg.epochs, len(GROUPS)))
    visits_log = np.zeros((cfg.epochs, len(GROUPS)), dtype=np.int64)
    for epoch in range(cfg.epochs):
        for _ in range(n_batches):
            decision = actor.act(act_rng, cfg.batch_size)
            batch = env.step_batch(decision.actions)
            logits = clf.forward(batch.images)
            losses = cross_entropy(logits, batch.labels)
            clf.backward(cross_entropy_grad(logits, batch.labels), reduction="mean")
            rewards = batch_rewards(sig, clf, losses, state, batch.groups, window)
            if state is not None:
                state.update(clf.params.grads)
            clf_opt.step()
            actor.policy_update(decision, rewards)
            visits_log[epoch] += np.bincount(batch.groups, minlength=len(GROUPS))
        losses_log[epoch] = test_loss(clf, eval_x, eval_t, eval_g)
        if progress is not None:
            progress(epoch, losses_log[epoch], visits_log[epoch])
    return RunMetrics(cfg.method.value, cfg.seed, losses_log, visits_log, cfg.mode.value)
