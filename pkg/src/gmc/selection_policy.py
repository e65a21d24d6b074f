"""Policy-gradient task selector with entropy regularisation.

The actor has no state: each decision feeds four fresh standard-normal
inputs through an MLP and samples from the softmax of its logits.  One
update minimises ``-mean(log pi(a) * r) - lambda_ent * mean(H(pi))`` over a
batch of decisions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_nn import Adam, Mlp, MlpSpec, NonFiniteError, log_softmax

NOISE_INPUTS = 4


@dataclass
class ActorConfig:
    n_actions: int
    hidden_dims: tuple[int, ...] = (256, 256)
    entropy_weight: float = 0.05
    lr: float = 1e-5
    betas: tuple[float, float] = (0.99, 0.999)


@dataclass
class Decision:
    inputs: np.ndarray      # (n, 4) noise fed to the actor
    actions: np.ndarray     # (n,)
    log_probs: np.ndarray   # (n,) log pi(a)
    probs: np.ndarray       # (n, n_actions)


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


class Actor:
    def __init__(self, cfg: ActorConfig, rng: np.random.Generator):
        if cfg.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        self.cfg = cfg
        self.net = Mlp(MlpSpec(NOISE_INPUTS, list(cfg.hidden_dims), cfg.n_actions), rng)
        self.opt = Adam(self.net.params, lr=cfg.lr, betas=cfg.betas)

    def act(self, rng: np.random.Generator, n: int = 1) -> Decision:
        z = rng.standard_normal((n, NOISE_INPUTS))
        logp = log_softmax(self.net.forward(z))
        probs = np.exp(logp)
        # inverse-CDF sampling keeps the draw count fixed at one uniform per row
        u = rng.random(n)
        cdf = np.cumsum(probs, axis=1)
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), self.cfg.n_actions - 1)
        return Decision(z, actions, logp[np.arange(n), actions], probs)

    def loss(self, decision: Decision, rewards: np.ndarray) -> float:
        logp = log_softmax(self.net.forward(decision.inputs))
        p = np.exp(logp)
        n = len(rewards)
        pg = -(logp[np.arange(n), decision.actions] * rewards).mean()
        return float(pg - self.cfg.entropy_weight * entropy(p).mean())

    def policy_update(self, decision: Decision, rewards) -> dict:
        """One Adam step on the policy loss for a batch of decisions."""
        r = np.asarray(rewards, dtype=np.float64)
        if r.shape != decision.actions.shape:
            raise ValueError("one reward per decision is required")
        if not np.all(np.isfinite(r)):
            bad = np.flatnonzero(~np.isfinite(r))
            raise NonFiniteError(f"non-finite intrinsic reward at positions {bad[:10].tolist()}")
        logp = log_softmax(self.net.forward(decision.inputs))
        p = np.exp(logp)
        n = len(r)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), decision.actions] = 1.0
        h = -(p * logp).sum(axis=1)
        # d/dlogits of -r log pi(a)  and of  -lambda * H
        grad = -r[:, None] * (onehot - p)
        grad += self.cfg.entropy_weight * p * (logp + h[:, None])
        self.net.backward(grad, reduction="mean")
        self.opt.step()
        return {"entropy": float(h.mean()),
                "loss": float(-(logp[np.arange(n), decision.actions] * r).mean()
                              - self.cfg.entropy_weight * h.mean())}
