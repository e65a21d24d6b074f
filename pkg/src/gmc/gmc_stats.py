"""Per-parameter momentum and second-moment tracking for GMC.

The statistics are kept apart from whatever optimizer trains the model, so
their decay rates can differ from the optimizer's.  With equal decay for both
averages and zero initialisation, ``m_i**2 <= v_i`` holds at every step
(Jensen's inequality on the EWMA weights).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_nn import DimensionError, NonFiniteError


class DegenerateMomentumError(ValueError):
    """Raised when a momentum-direction quantity is asked of a zero vector."""


@dataclass
class GmcState:
    dim: int
    beta0: float = 0.999
    beta1: float = 0.999
    epsilon: float = 1e-8
    bias_correction: bool = False
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        for name in ("beta0", "beta1"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.m is None:
            self.m = np.zeros(self.dim)
        if self.v is None:
            self.v = np.zeros(self.dim)
        if self.m.shape != (self.dim,) or self.v.shape != (self.dim,):
            raise DimensionError("m and v must have length dim")

    def update(self, grads: np.ndarray) -> "GmcState":
        """Fold one gradient into both EWMAs (in place); returns ``self``."""
        g = np.asarray(grads, dtype=np.float64)
        if g.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim} gradients, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
        self.m *= self.beta0
        self.m += (1.0 - self.beta0) * g
        self.v *= self.beta1
        self.v += (1.0 - self.beta1) * (g * g)
        self.step_count += 1
        return self

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """(m, v) as used by the signals, bias-corrected if configured."""
        if not self.bias_correction or self.step_count == 0:
            return self.m, self.v
        return (self.m / (1.0 - self.beta0 ** self.step_count),
                self.v / (1.0 - self.beta1 ** self.step_count))

    def coupling_weights(self) -> np.ndarray:
        """Signed per-parameter weights ``m_i / (v_i + eps)``."""
        m, v = self.moments()
        return m / (v + self.epsilon)


def momentum_change_first_order(m, g) -> float:
    """Linearised change of ``||m||`` when ``g`` is added: ``m.g / ||m||``."""
    m = np.asarray(m, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if m.shape != g.shape:
        raise DimensionError("m and g must have the same shape")
    norm = np.linalg.norm(m)
    if norm == 0.0:
        raise DegenerateMomentumError("momentum has zero norm")
    return float(m @ g / norm)


def momentum_change_exact(m, g) -> float:
    m = np.asarray(m, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return float(np.linalg.norm(m + g) - np.linalg.norm(m))
