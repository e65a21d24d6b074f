"""PPO on DoorKey with optional intrinsic-reward modules.

Four agents share one training loop and differ only in the intrinsic
module plugged into it:

* ``ppo``      no intrinsic reward
* ``icm``      ICM forward-model prediction error in feature space
* ``gmc``      GMC of a raw next-observation dynamics model
* ``icm_gmc``  ICM trained as usual, reward = GMC of its forward model

Intrinsic modules draw from their own random streams, so with
``intrinsic_coef = 0`` every agent reproduces the PPO trajectory exactly.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .gmc_stats import GmcState
from .gridworld import N_ACTIONS, VecDoorKey
from .tensor_nn import (Adam, Mlp, MlpSpec, NonFiniteError, clip_grad_norm, cross_entropy,
                        cross_entropy_grad, log_softmax, mse, mse_grad)

AGENTS = ("ppo", "icm", "gmc", "icm_gmc")


class NumericalAbort(NonFiniteError):
    pass


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    epochs: int = 4
    minibatch: int = 256
    rollout: int = 2048
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    reward_scaling: float = 10.0
    total_steps: int = 3_000_000
    hidden: tuple[int, ...] = (128, 128)
    n_envs: int = 16
    normalize_advantages: bool = True
    adam_eps: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.rollout % self.n_envs:
            raise ValueError("rollout must be a multiple of n_envs")
        for name in ("gamma", "gae_lambda", "max_grad_norm", "epochs", "minibatch",
                     "policy_lr", "value_lr", "reward_scaling", "total_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class IcmConfig:
    feature_dim: int = 64
    lr: float = 1e-4
    intrinsic_coef: float = 0.02
    forward_weight: float = 0.2
    inverse_weight: float = 0.8
    hidden: int = 128
    minibatch: int = 256

    def __post_init__(self):
        if min(self.forward_weight, self.inverse_weight, self.intrinsic_coef) < 0:
            raise ValueError("ICM weights must be non-negative")


@dataclass
class GmcRlConfig:
    beta0: float = 0.99
    beta1: float = 0.99
    intrinsic_coef: float = 0.02
    dynamics_lr: float = 1e-4
    epsilon: float = 1e-8
    normalize_dim: bool = True
    hidden: int = 128
    minibatch: int = 256

    def __post_init__(self):
        for b in (self.beta0, self.beta1):
            if not 0.0 < b < 1.0:
                raise ValueError("GMC decays must lie in (0, 1)")


@dataclass
class Trajectory:
    """One rollout, arrays shaped (T, n_envs, ...)."""
    obs: np.ndarray
    next_obs: np.ndarray     # true successor (terminal obs where an episode ended)
    actions: np.ndarray
    ext_rewards: np.ndarray
    int_rewards: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray  # V(s_T) per env, for bootstrapping

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape(a.shape[0] * a.shape[1], *a.shape[2:])


def gae_advantages(rewards, values, dones, last_values, gamma: float, lam: float):
    """Generalised advantage estimation over a time-major rollout.

    ``delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t`` and
    ``A_t = delta_t + gamma lam (1 - done_t) A_{t+1}``.
    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_values, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def _one_hot(actions, n: int = N_ACTIONS) -> np.ndarray:
    out = np.zeros((len(actions), n))
    out[np.arange(len(actions)), actions] = 1.0
    return out


# -- intrinsic modules ----------------------------------------------------------

class Icm:
    """Encoder, inverse model and feature-space forward model.

    The forward model sees detached features; only the inverse loss shapes
    the encoder.
    """

    def __init__(self, obs_dim: int, cfg: IcmConfig, rng: np.random.Generator,
                 use_gmc: bool = False, gmc_cfg: GmcRlConfig | None = None):
        self.cfg = cfg
        f, h = cfg.feature_dim, cfg.hidden
        self.encoder = Mlp(MlpSpec(obs_dim, [h], f), rng)
        self.inverse = Mlp(MlpSpec(2 * f, [h], N_ACTIONS), rng)
        self.forward_model = Mlp(MlpSpec(f + N_ACTIONS, [h], f), rng)
        self.opts = [Adam(net.params, lr=cfg.lr) for net in
                     (self.encoder, self.inverse, self.forward_model)]
        self.rng = rng
        self.use_gmc = use_gmc
        self.gmc_cfg = gmc_cfg or GmcRlConfig()
        self.gmc_state = None
        if use_gmc:
            g = self.gmc_cfg
            self.gmc_state = GmcState(len(self.forward_model.params), g.beta0, g.beta1, g.epsilon)

    @property
    def intrinsic_coef(self) -> float:
        return self.gmc_cfg.intrinsic_coef if self.use_gmc else self.cfg.intrinsic_coef

    def features(self, obs) -> np.ndarray:
        return self.encoder.forward(obs)

    def forward_error(self, obs, actions, next_obs):
        phi, phi_next = self.features(obs), self.features(next_obs)
        pred = self.forward_model.forward(np.hstack([phi, _one_hot(actions)]))
        return pred, phi_next

    def intrinsic(self, obs, actions, next_obs, chunk: int = 1024) -> np.ndarray:
        """Unscaled per-transition intrinsic reward."""
        out = np.empty(len(actions))
        for lo in range(0, len(actions), chunk):
            sl = slice(lo, lo + chunk)
            pred, target = self.forward_error(obs[sl], actions[sl], next_obs[sl])
            if not self.use_gmc:
                diff = target - pred
                out[sl] = 0.5 * np.einsum("nf,nf->n", diff, diff)
            else:
                self.forward_model.backward(mse_grad(pred, target), reduction="sum")
                out[sl] = gmc_batch(self.forward_model, self.gmc_state,
                                    self.gmc_cfg.normalize_dim, self.cfg.minibatch)
        return out

    def losses(self, obs, actions, next_obs) -> tuple[float, float]:
        phi, phi_next = self.features(obs), self.features(next_obs)
        logits = self.inverse.forward(np.hstack([phi, phi_next]))
        pred = self.forward_model.forward(np.hstack([phi, _one_hot(actions)]))
        return float(mse(pred, phi_next).mean()), float(cross_entropy(logits, actions).mean())

    def train(self, obs, actions, next_obs) -> dict:
        n = len(actions)
        order = self.rng.permutation(n)
        fwd_losses, inv_losses = [], []
        for lo in range(0, n, self.cfg.minibatch):
            idx = order[lo:lo + self.cfg.minibatch]
            b = len(idx)
            both = self.encoder.forward(np.vstack([obs[idx], next_obs[idx]]))
            phi, phi_next = both[:b], both[b:]
            logits = self.inverse.forward(np.hstack([phi, phi_next]))
            inv_losses.append(cross_entropy(logits, actions[idx]).mean())
            d_in = self.inverse.backward(
                self.cfg.inverse_weight * cross_entropy_grad(logits, actions[idx]))
            self.encoder.backward(np.vstack([d_in[:, :phi.shape[1]], d_in[:, phi.shape[1]:]]),
                                  reduction="sum")
            pred = self.forward_model.forward(np.hstack([phi, _one_hot(actions[idx])]))
            fwd_losses.append(mse(pred, phi_next).mean())
            self.forward_model.backward(mse_grad(pred, phi_next))
            if self.gmc_state is not None:
                self.gmc_state.update(self.forward_model.params.grads)
            self.forward_model.params.grads *= self.cfg.forward_weight
            for opt in self.opts:
                opt.step()
        return {"forward_loss": float(np.mean(fwd_losses)),
                "inverse_loss": float(np.mean(inv_losses))}


class GmcDynamics:
    """MLP predicting the next raw observation from (obs, one-hot action)."""

    def __init__(self, obs_dim: int, cfg: GmcRlConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.model = Mlp(MlpSpec(obs_dim + N_ACTIONS, [cfg.hidden], obs_dim), rng)
        self.opt = Adam(self.model.params, lr=cfg.dynamics_lr)
        self.state = GmcState(len(self.model.params), cfg.beta0, cfg.beta1, cfg.epsilon)
        self.rng = rng

    @property
    def intrinsic_coef(self) -> float:
        return self.cfg.intrinsic_coef

    def intrinsic(self, obs, actions, next_obs, chunk: int = 1024) -> np.ndarray:
        out = np.empty(len(actions))
        for lo in range(0, len(actions), chunk):
            sl = slice(lo, lo + chunk)
            pred = self.model.forward(np.hstack([obs[sl], _one_hot(actions[sl])]))
            self.model.backward(mse_grad(pred, next_obs[sl]), reduction="sum")
            out[sl] = gmc_batch(self.model, self.state, self.cfg.normalize_dim,
                                self.cfg.minibatch)
        return out

    def train(self, obs, actions, next_obs) -> dict:
        order = self.rng.permutation(len(actions))
        losses = []
        for lo in range(0, len(actions), self.cfg.minibatch):
            idx = order[lo:lo + self.cfg.minibatch]
            pred = self.model.forward(np.hstack([obs[idx], _one_hot(actions[idx])]))
            losses.append(mse(pred, next_obs[idx]).mean())
            self.model.backward(mse_grad(pred, next_obs[idx]))
            self.state.update(self.model.params.grads)
            self.opt.step()
        return {"dynamics_loss": float(np.mean(losses))}


def gmc_batch(model: Mlp, state: GmcState, normalize_dim: bool = True,
              batch: int = 1) -> np.ndarray:
    """Per-sample GMC from the model's last backward pass.

    ``batch`` rescales each sample's gradient to its share of a mean loss
    over a training minibatch of that size, the gradient scale the GMC
    statistics are accumulated at.
    """
    r = model.per_sample_contract(state.coupling_weights(), absolute=True) / batch
    return r / math.sqrt(state.dim) if normalize_dim else r


def icm_intrinsic(icm: Icm, s, a, s_next) -> tuple[np.ndarray, float]:
    """``intrinsic_coef * 0.5 ||phi(s') - f(phi(s), a)||^2`` and the ICM loss."""
    pred, target = icm.forward_error(s, a, s_next)
    diff = target - pred
    r = icm.cfg.intrinsic_coef * 0.5 * np.einsum("nf,nf->n", diff, diff)
    fwd, inv = icm.losses(s, a, s_next)
    return r, icm.cfg.forward_weight * fwd + icm.cfg.inverse_weight * inv


def gmc_intrinsic(dyn: GmcDynamics, s, a, s_next) -> np.ndarray:
    return dyn.cfg.intrinsic_coef * dyn.intrinsic(s, a, s_next)


def icm_gmc_intrinsic(icm: Icm, s, a, s_next) -> np.ndarray:
    if not icm.use_gmc:
        raise ValueError("ICM module was built without GMC statistics")
    return icm.intrinsic_coef * icm.intrinsic(s, a, s_next)


# -- PPO ------------------------------------------------------------------------

class ActorCritic:
    def __init__(self, obs_dim: int, cfg: PpoConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.policy = Mlp(MlpSpec(obs_dim, list(cfg.hidden), N_ACTIONS), rng)
        self.value = Mlp(MlpSpec(obs_dim, list(cfg.hidden), 1), rng)
        self.policy_opt = Adam(self.policy.params, lr=cfg.policy_lr, eps=cfg.adam_eps)
        self.value_opt = Adam(self.value.params, lr=cfg.value_lr, eps=cfg.adam_eps)

    def act(self, obs, rng: np.random.Generator):
        logp = log_softmax(self.policy.forward(obs))
        u = rng.random(len(obs))
        cdf = np.cumsum(np.exp(logp), axis=1)
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), N_ACTIONS - 1)
        values = self.value.forward(obs)[:, 0]
        return actions, logp[np.arange(len(obs)), actions], values


def ppo_update(ac: ActorCritic, traj: Trajectory, rewards: np.ndarray,
               rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO epochs over shuffled minibatches of one rollout."""
    cfg = ac.cfg
    adv, ret = gae_advantages(rewards, traj.values, traj.dones, traj.last_values,
                              cfg.gamma, cfg.gae_lambda)
    obs, actions = traj.flat("obs"), traj.flat("actions")
    old_logp = traj.flat("log_probs")
    adv, ret = adv.reshape(-1), ret.reshape(-1)
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(actions)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_frac": [],
             "policy_grad_norm": [], "value_grad_norm": []}
    first_ratio = None
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            b = len(idx)
            logp = log_softmax(ac.policy.forward(obs[idx]))
            p = np.exp(logp)
            logp_a = logp[np.arange(b), actions[idx]]
            ratio = np.exp(logp_a - old_logp[idx])
            if first_ratio is None:
                first_ratio = ratio.copy()
            a = adv[idx]
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            surr = np.minimum(ratio * a, clipped * a)
            ent = -(p * logp).sum(axis=1)
            pl = -surr.mean() - cfg.entropy_coef * ent.mean()
            if not math.isfinite(pl):
                raise NumericalAbort(f"non-finite policy loss {pl}")
            # gradient flows through the unclipped branch only when it is the min
            d_logp_a = -(a * (ratio * a <= clipped * a)) * ratio
            onehot = _one_hot(actions[idx])
            grad = d_logp_a[:, None] * (onehot - p)
            grad += cfg.entropy_coef * p * (logp + ent[:, None])
            ac.policy.backward(grad)
            stats["policy_grad_norm"].append(
                min(clip_grad_norm(ac.policy.params.grads, cfg.max_grad_norm), cfg.max_grad_norm))
            ac.policy_opt.step()

            v = ac.value.forward(obs[idx])[:, 0]
            err = v - ret[idx]
            vl = 0.5 * float(np.mean(err * err))
            if not math.isfinite(vl):
                raise NumericalAbort(f"non-finite value loss {vl}")
            ac.value.backward(err[:, None])
            stats["value_grad_norm"].append(
                min(clip_grad_norm(ac.value.params.grads, cfg.max_grad_norm), cfg.max_grad_norm))
            ac.value_opt.step()

            stats["policy_loss"].append(pl)
            stats["value_loss"].append(vl)
            stats["entropy"].append(float(ent.mean()))
            stats["clip_frac"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["max_policy_grad_norm"] = float(np.max(stats["policy_grad_norm"]))
    out["first_ratio_max_dev"] = float(np.max(np.abs(first_ratio - 1.0)))
    return out


# -- training loop --------------------------------------------------------------

@dataclass
class RlRunConfig:
    agent: str = "ppo"
    seed: int = 0
    size: int = 8
    max_steps: int | None = None
    door_noise: bool = False
    noise_std: float = 1.0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    icm: IcmConfig = field(default_factory=IcmConfig)
    gmc: GmcRlConfig = field(default_factory=GmcRlConfig)
    reward_window: int = 100
    stop_at_reward: float | None = None

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}; choose from {AGENTS}")


@dataclass
class RlRunResult:
    agent: str
    seed: int
    rows: list[dict]
    episode_rewards: list[float]
    trajectories: list[Trajectory] | None = None

    def final_reward(self, last: int = 100) -> float:
        tail = self.episode_rewards[-last:]
        return float(np.mean(tail)) if tail else 0.0


def make_intrinsic(cfg: RlRunConfig, obs_dim: int, rng: np.random.Generator):
    if cfg.agent == "icm":
        return Icm(obs_dim, cfg.icm, rng)
    if cfg.agent == "icm_gmc":
        return Icm(obs_dim, cfg.icm, rng, use_gmc=True, gmc_cfg=cfg.gmc)
    if cfg.agent == "gmc":
        return GmcDynamics(obs_dim, cfg.gmc, rng)
    return None


def train(cfg: RlRunConfig, keep_trajectories: bool = False, progress=None) -> RlRunResult:
    p = cfg.ppo
    envs = VecDoorKey(p.n_envs, cfg.size, cfg.max_steps, cfg.door_noise, cfg.noise_std,
                      seed=cfg.seed)
    ss = np.random.SeedSequence(cfg.seed)
    net_seed, act_seed, mb_seed, int_seed = ss.spawn(4)
    ac = ActorCritic(envs.obs_dim, p, np.random.default_rng(net_seed))
    act_rng = np.random.default_rng(act_seed)
    mb_rng = np.random.default_rng(mb_seed)
    module = make_intrinsic(cfg, envs.obs_dim, np.random.default_rng(int_seed))

    T, N = p.rollout // p.n_envs, p.n_envs
    obs = envs.reset()
    ep_ret = np.zeros(N)
    recent = deque(maxlen=cfg.reward_window)
    all_eps: list[float] = []
    rows: list[dict] = []
    kept = [] if keep_trajectories else None
    steps = 0
    rollout = 0
    while steps < p.total_steps:
        buf = {k: [] for k in ("obs", "next_obs", "actions", "rew", "logp", "val", "done")}
        finished = []
        for _ in range(T):
            actions, logp, values = ac.act(obs, act_rng)
            nxt, rew, done, final = envs.step(actions)
            for k, v in zip(buf, (obs, final, actions, rew, logp, values, done)):
                buf[k].append(v)
            ep_ret += rew
            for i in np.flatnonzero(done):
                finished.append(ep_ret[i])
                ep_ret[i] = 0.0
            obs = nxt
        steps += T * N
        last_values = ac.value.forward(obs)[:, 0]
        traj = Trajectory(*(np.asarray(buf[k]) for k in ("obs", "next_obs", "actions")),
                          ext_rewards=np.asarray(buf["rew"]),
                          int_rewards=np.zeros((T, N)),
                          log_probs=np.asarray(buf["logp"]), values=np.asarray(buf["val"]),
                          dones=np.asarray(buf["done"]), last_values=last_values)
        info = {}
        coef = 0.0
        if module is not None:
            s, a, s2 = traj.flat("obs"), traj.flat("actions"), traj.flat("next_obs")
            r_int = module.intrinsic(s, a, s2)
            if not np.all(np.isfinite(r_int)):
                raise NumericalAbort("non-finite intrinsic reward")
            traj.int_rewards = r_int.reshape(T, N)
            coef = module.intrinsic_coef
            info = module.train(s, a, s2)
        rewards = p.reward_scaling * traj.ext_rewards + coef * traj.int_rewards
        info.update(ppo_update(ac, traj, rewards, mb_rng))
        recent.extend(finished)
        all_eps.extend(finished)
        row = {"rollout": rollout, "seed": cfg.seed, "method": cfg.agent, "steps": steps,
               "mean_episodic_reward": float(np.mean(recent)) if recent else 0.0,
               "episodes": len(finished),
               "intrinsic_mean": float(coef * traj.int_rewards.mean()), **info}
        rows.append(row)
        if kept is not None:
            kept.append(traj)
        if progress is not None:
            progress(row)
        rollout += 1
        if (cfg.stop_at_reward is not None and len(recent) >= min(20, cfg.reward_window)
                and row["mean_episodic_reward"] > cfg.stop_at_reward):
            break
    return RlRunResult(cfg.agent, cfg.seed, rows, all_eps, kept)
