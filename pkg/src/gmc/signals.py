"""Intrinsic-reward signals computed from a dynamics model's loss and gradients.

Single-sample functions take a flat gradient vector.  :func:`batch_rewards`
computes the same quantities for every sample of a batch straight from the
per-sample errors cached by :meth:`gmc.tensor_nn.Mlp.backward`.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .gmc_stats import GmcState
from .tensor_nn import DimensionError, Mlp


class SignalKind(str, Enum):
    UNIFORM = "uniform"
    CURIOSITY = "curiosity"
    GMC = "gmc"
    NORM_LAST = "normlast"
    NORM_ALL = "normall"
    DELTA_LOSS = "deltaloss"
    GMC_DOT_PRODUCT = "gmc_dot"
    GMC_COSINE = "gmc_cosine"

    @classmethod
    def parse(cls, name: str) -> "SignalKind":
        key = name.strip().lower().replace("-", "_")
        aliases = {"norm_last": "normlast", "norm_all": "normall",
                   "delta_loss": "deltaloss", "dot": "gmc_dot",
                   "gmc_dot_product": "gmc_dot", "cosine": "gmc_cosine"}
        return cls(aliases.get(key, key))


def _check(grads, state: GmcState) -> np.ndarray:
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != (state.dim,):
        raise DimensionError(f"expected {state.dim} gradients, got shape {g.shape}")
    return g


def gmc(grads, state: GmcState, normalize_dim: bool = True) -> float:
    """Gradient-momentum coupling ``sum_i |g_i m_i / (v_i + eps)|``."""
    g = _check(grads, state)
    r = float(np.abs(g * state.coupling_weights()).sum())
    return r / np.sqrt(state.dim) if normalize_dim else r


def gmc_dot_product(grads, state: GmcState, normalize_dim: bool = False) -> float:
    g = _check(grads, state)
    r = abs(float(g @ state.coupling_weights()))
    return r / np.sqrt(state.dim) if normalize_dim else r


def gmc_cosine(grads, state: GmcState) -> float:
    g = _check(grads, state)
    m, _ = state.moments()
    denom = np.linalg.norm(g) * np.linalg.norm(m) + state.epsilon
    return abs(float(g @ m)) / denom


def curiosity(loss: float) -> float:
    return float(loss)


def norm_last(grads, last_layer: slice, scale: float = 1.0) -> float:
    return scale * float(np.abs(np.asarray(grads)[last_layer]).sum())


def norm_all(grads, scale: float = 1.0) -> float:
    return scale * float(np.abs(np.asarray(grads)).sum())


class LossWindow:
    """Two consecutive, disjoint windows of recent losses per group."""

    def __init__(self, n_groups: int, size: int = 50):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self._buf = [deque(maxlen=2 * size) for _ in range(n_groups)]

    def push(self, group: int, loss: float) -> None:
        self._buf[group].append(float(loss))

    def full(self, group: int) -> bool:
        return len(self._buf[group]) == 2 * self.size

    def means(self, group: int) -> tuple[float, float]:
        """(previous, recent) window means; requires a full buffer."""
        buf = np.fromiter(self._buf[group], dtype=np.float64)
        return float(buf[:self.size].mean()), float(buf[self.size:].mean())


def delta_loss(window: LossWindow, group: int, scale: float = 1.0) -> float:
    """``-(recent mean - previous mean) / N``; zero until both windows fill."""
    if not window.full(group):
        return 0.0
    previous, recent = window.means(group)
    return -scale * (recent - previous) / window.size


@dataclass
class SignalConfig:
    kind: SignalKind = SignalKind.GMC
    normalize_dim: bool = True
    norm_last_scale: float = 1.0
    norm_all_scale: float = 1.0
    delta_loss_scale: float = 1.0
    window: int = 50
    # "mean": sample gradients are those of the batch-mean loss (they sum to
    # the update gradient); "none": gradients of each sample's own loss.
    grad_reduction: str = "mean"


def batch_rewards(cfg: SignalConfig, model: Mlp, losses: np.ndarray,
                  state: GmcState | None = None, groups=None,
                  window: LossWindow | None = None) -> np.ndarray:
    """Per-sample intrinsic rewards for the batch of the last backward pass.

    ``model.backward`` must have been called with per-sample loss gradients.
    GMC-type signals read ``state`` as it is now, so call this before folding
    the batch gradient into it.
    """
    kind = cfg.kind
    n = len(losses)
    if cfg.grad_reduction not in ("mean", "none"):
        raise ValueError(f"unknown grad_reduction {cfg.grad_reduction!r}")
    gscale = 1.0 / n if cfg.grad_reduction == "mean" else 1.0
    if kind is SignalKind.UNIFORM:
        return np.zeros(n)
    if kind is SignalKind.CURIOSITY:
        return np.asarray(losses, dtype=np.float64).copy()
    if kind is SignalKind.NORM_ALL:
        return gscale * cfg.norm_all_scale * model.per_sample_contract(
            np.ones(len(model.params)), absolute=True)
    if kind is SignalKind.NORM_LAST:
        return gscale * cfg.norm_last_scale * model.per_sample_contract(
            np.ones(len(model.params)), absolute=True, layers=[model.n_layers - 1])
    if kind is SignalKind.DELTA_LOSS:
        out = np.empty(n)
        for i, (g, loss) in enumerate(zip(groups, losses)):
            window.push(int(g), loss)
            out[i] = delta_loss(window, int(g), cfg.delta_loss_scale)
        return out

    if state is None:
        raise ValueError(f"{kind.value} needs a GmcState")
    norm = gscale / np.sqrt(state.dim) if cfg.normalize_dim else gscale
    if kind is SignalKind.GMC:
        return norm * model.per_sample_contract(state.coupling_weights(), absolute=True)
    if kind is SignalKind.GMC_DOT_PRODUCT:
        return norm * np.abs(model.per_sample_contract(state.coupling_weights()))
    if kind is SignalKind.GMC_COSINE:
        m, _ = state.moments()
        dots = gscale * np.abs(model.per_sample_contract(m))
        gnorm = gscale * np.sqrt(model.per_sample_sq_norm())
        return dots / (gnorm * np.linalg.norm(m) + state.epsilon)
    raise ValueError(f"unhandled signal {kind}")
