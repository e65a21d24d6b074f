"""Dense float64 MLPs with a hand-written reverse pass.

All parameters of a network live in one flat :class:`ParamStore`, so
per-parameter statistics (momentum, second moment, signals) are plain
vector operations over ``store.values`` / ``store.grads``.

Besides the usual batch-reduced gradient, :meth:`Mlp.backward` keeps the
per-sample backpropagated errors of every layer.  Because the gradient of a
dense layer for one sample is the outer product ``a_n delta_n^T``, any
per-parameter weighted sum of a sample's gradient can be contracted without
materialising the (batch, d) gradient matrix; see
:meth:`Mlp.per_sample_contract`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class NonFiniteError(ValueError):
    """A NaN or Inf reached a quantity that must stay finite."""


class DimensionError(ValueError):
    pass


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    """Convert ``x`` to a float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-d input, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


class ParamStore:
    """Flat parameter vector with named, contiguous segments."""

    def __init__(self, shapes: Sequence[tuple[str, tuple[int, ...]]]):
        self.segments: list[Segment] = []
        offset = 0
        for name, shape in shapes:
            length = int(np.prod(shape))
            self.segments.append(Segment(name, offset, length, tuple(shape)))
            offset += length
        self.values = np.zeros(offset)
        self.grads = np.zeros(offset)
        self._by_name = {s.name: s for s in self.segments}

    def __len__(self) -> int:
        return self.values.size

    def segment(self, name: str) -> Segment:
        return self._by_name[name]

    def view(self, name: str) -> np.ndarray:
        seg = self._by_name[name]
        return self.values[seg.slice].reshape(seg.shape)

    def grad_view(self, name: str) -> np.ndarray:
        seg = self._by_name[name]
        return self.grads[seg.slice].reshape(seg.shape)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def span(self, names: Sequence[str]) -> slice:
        """Slice covering the given (adjacent) segments."""
        segs = sorted((self._by_name[n] for n in names), key=lambda s: s.offset)
        for a, b in zip(segs, segs[1:]):
            if a.offset + a.length != b.offset:
                raise ValueError("segments are not contiguous")
        return slice(segs[0].offset, segs[-1].offset + segs[-1].length)


@dataclass
class MlpSpec:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [256, 256])
    output_dim: int = 10
    activation: str = "relu"

    def __post_init__(self):
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


class Mlp:
    """ReLU multilayer perceptron backed by a :class:`ParamStore`.

    Weights are stored as ``(fan_in, fan_out)`` so a layer computes
    ``a @ W + b``.  Initialisation follows ``torch.nn.Linear``: uniform in
    ``+-1/sqrt(fan_in)`` for weights and biases.
    """

    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        shapes = []
        for k, (fan_in, fan_out) in enumerate(spec.layer_dims):
            shapes.append((f"layer{k}.weight", (fan_in, fan_out)))
            shapes.append((f"layer{k}.bias", (fan_out,)))
        self.params = ParamStore(shapes)
        self.n_layers = len(spec.layer_dims)
        if rng is not None:
            for k, (fan_in, _) in enumerate(spec.layer_dims):
                bound = 1.0 / np.sqrt(fan_in)
                for part in ("weight", "bias"):
                    v = self.params.view(f"layer{k}.{part}")
                    v[...] = rng.uniform(-bound, bound, size=v.shape)
        self._inputs: list[np.ndarray] | None = None
        self._deltas: list[np.ndarray] | None = None

    @property
    def last_layer(self) -> slice:
        k = self.n_layers - 1
        return self.params.span([f"layer{k}.weight", f"layer{k}.bias"])

    def weight(self, k: int) -> np.ndarray:
        return self.params.view(f"layer{k}.weight")

    def bias(self, k: int) -> np.ndarray:
        return self.params.view(f"layer{k}.bias")

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DimensionError(
                f"expected (batch, {self.spec.input_dim}) input, got {x.shape}")
        inputs = []
        a = x
        for k in range(self.n_layers):
            inputs.append(a)
            z = a @ self.weight(k) + self.bias(k)
            a = np.maximum(z, 0.0) if k < self.n_layers - 1 else z
        self._inputs = inputs
        self._deltas = None
        return a

    __call__ = forward

    def backward(self, grad_output, reduction: str = "mean",
                 accumulate: bool = False) -> np.ndarray:
        """Backpropagate per-sample output gradients.

        ``grad_output[n]`` is the gradient of sample n's own loss with respect
        to its output row.  Parameter gradients are reduced over the batch by
        ``reduction`` ("mean" or "sum") and written to ``params.grads``.
        Returns the gradient with respect to the input, reduced the same way.
        """
        if self._inputs is None:
            raise RuntimeError("backward() called before forward()")
        delta = np.asarray(grad_output, dtype=np.float64)
        n = self._inputs[0].shape[0]
        if delta.shape != (n, self.spec.output_dim):
            raise DimensionError(
                f"grad_output shape {delta.shape} does not match output "
                f"({n}, {self.spec.output_dim})")
        if reduction == "mean":
            scale = 1.0 / n
        elif reduction == "sum":
            scale = 1.0
        else:
            raise ValueError(f"unknown reduction {reduction!r}")
        if not accumulate:
            self.params.zero_grad()
        deltas = [None] * self.n_layers
        for k in reversed(range(self.n_layers)):
            deltas[k] = delta
            a = self._inputs[k]
            self.params.grad_view(f"layer{k}.weight")[...] += scale * (a.T @ delta)
            self.params.grad_view(f"layer{k}.bias")[...] += scale * delta.sum(axis=0)
            delta = delta @ self.weight(k).T
            if k > 0:
                delta = delta * (a > 0.0)
        self._deltas = deltas
        return scale * delta

    # -- per-sample instrumentation -------------------------------------------------

    def _require_deltas(self):
        if self._deltas is None:
            raise RuntimeError("per-sample statistics need a backward() pass first")
        return self._inputs, self._deltas

    def per_sample_contract(self, weights: np.ndarray, absolute: bool = False,
                            layers: Sequence[int] | None = None) -> np.ndarray:
        """Per-sample ``sum_i g_ni * w_i`` over the selected layers.

        With ``absolute=True`` the summand is ``|g_ni * w_i|``.  ``g_n`` is the
        gradient of sample n's own loss from the last backward pass.
        """
        inputs, deltas = self._require_deltas()
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(self.params),):
            raise DimensionError("weights must match the parameter count")
        if absolute:
            w = np.abs(w)
        out = np.zeros(inputs[0].shape[0])
        for k in (range(self.n_layers) if layers is None else layers):
            a, d = inputs[k], deltas[k]
            if absolute:
                a, d = np.abs(a), np.abs(d)
            ww = w[self.params.segment(f"layer{k}.weight").slice].reshape(a.shape[1], d.shape[1])
            wb = w[self.params.segment(f"layer{k}.bias").slice]
            out += np.einsum("ni,ij,nj->n", a, ww, d, optimize=True) + d @ wb
        return out

    def per_sample_sq_norm(self, layers: Sequence[int] | None = None) -> np.ndarray:
        inputs, deltas = self._require_deltas()
        out = np.zeros(inputs[0].shape[0])
        for k in (range(self.n_layers) if layers is None else layers):
            d2 = np.einsum("nj,nj->n", deltas[k], deltas[k])
            out += np.einsum("ni,ni->n", inputs[k], inputs[k]) * d2 + d2
        return out


def per_sample_gradients(mlp: Mlp, x, grad_fn) -> np.ndarray:
    """Reference per-sample gradients via a batch-of-one loop.

    ``grad_fn(outputs, n)`` must return the output gradient of sample ``n``'s
    loss for a (1, out) output.  Returns a ``(batch, d)`` array.  Leaves
    ``mlp.params.grads`` holding the last sample's gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    rows = []
    for n in range(x.shape[0]):
        out = mlp.forward(x[n:n + 1])
        mlp.backward(grad_fn(out, n), reduction="sum")
        rows.append(mlp.params.grads.copy())
    return np.stack(rows)


# -- losses ---------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"label out of range [0, {n_classes})")
    return labels


def cross_entropy(logits, labels) -> np.ndarray:
    """Per-sample ``-log softmax(logits)[label]``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(_check_labels(labels, logits.shape[-1]))
    logp = log_softmax(logits)
    return -logp[np.arange(len(labels)), labels]


def cross_entropy_loss(logits, label) -> float:
    """Mean cross-entropy; ``label`` may be a single index or an array."""
    return float(cross_entropy(logits, label).mean())


def cross_entropy_grad(logits, labels) -> np.ndarray:
    """Per-sample gradient of the cross-entropy with respect to the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(_check_labels(labels, logits.shape[-1]))
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g


def mse(pred, target) -> np.ndarray:
    """Per-sample mean squared error over the feature axis."""
    diff = np.asarray(pred) - np.asarray(target)
    return np.mean(diff * diff, axis=-1)


def mse_grad(pred, target) -> np.ndarray:
    diff = np.asarray(pred) - np.asarray(target)
    return 2.0 * diff / diff.shape[-1]


# -- optimisation ---------------------------------------------------------------


class Adam:
    """Adam over a flat ParamStore (bias-corrected, as in Kingma & Ba)."""

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(len(params))
        self.v = np.zeros(len(params))
        self.t = 0

    def step(self) -> None:
        g = self.params.grads
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        step_size = self.lr / (1.0 - self.beta1 ** self.t)
        denom = np.sqrt(self.v / (1.0 - self.beta2 ** self.t)) + self.eps
        self.params.values -= step_size * self.m / denom


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> float:
    """Scale ``grads`` in place so its L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        grads *= max_norm / (norm + 1e-12)
    return norm
