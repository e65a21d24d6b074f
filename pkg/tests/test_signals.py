import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from gmc.gmc_stats import GmcState
from gmc.signals import (LossWindow, SignalConfig, SignalKind, batch_rewards, curiosity,
                         delta_loss, gmc, gmc_cosine, gmc_dot_product, norm_all, norm_last)
from gmc.tensor_nn import (DimensionError, Mlp, MlpSpec, cross_entropy, cross_entropy_grad,
                           per_sample_gradients)


def state_with(m, v, eps=0.0):
    m, v = np.asarray(m, float), np.asarray(v, float)
    return GmcState(len(m), epsilon=eps, m=m.copy(), v=v.copy())


def scalar_gmc(g, m, v, eps):
    total = 0.0
    for gi, mi, vi in zip(g, m, v):
        total += abs(gi * mi / (vi + eps))
    return total


def test_gmc_examples():
    s = state_with([0.5, 0.5], [1, 1])
    assert gmc([1, -2], s, normalize_dim=False) == pytest.approx(1.5, abs=1e-15)
    assert gmc([1, -2], s) == pytest.approx(1.5 / math.sqrt(2), abs=1e-15)
    assert gmc([3, 4], state_with([0, 0], [1, 1])) == 0.0
    with pytest.raises(DimensionError):
        gmc([1, 2, 3], s)


def test_dot_and_cosine_examples():
    s = state_with([0.5, 0.5], [1, 1])
    assert gmc_dot_product([1, -2], s) == pytest.approx(0.5, abs=1e-15)
    assert gmc_dot_product([1, -1], s) == 0.0 and gmc([1, -1], s) > 0
    assert gmc_dot_product([1, 2], s) == pytest.approx(gmc([1, 2], s, normalize_dim=False))
    c = state_with([1.0, 2.0], [1, 1], eps=1e-8)
    assert gmc_cosine([2.0, 4.0], c) == pytest.approx(1.0, abs=1e-8)
    assert gmc_cosine([-2.0, 1.0], c) == pytest.approx(0.0, abs=1e-15)


def test_simple_signals():
    assert curiosity(0.0) == 0.0 and curiosity(2.3026) == 2.3026
    logits = np.zeros((1, 10))
    assert curiosity(cross_entropy(logits, [4])[0]) == pytest.approx(math.log(10))
    net = Mlp(MlpSpec(2, [3], 3))
    g = np.zeros(len(net.params))
    assert norm_last(g, net.last_layer) == 0.0
    g[net.last_layer][:3] = [1, -1, 2]
    assert norm_last(g, net.last_layer) == 4.0
    g[:2] = 100.0  # first-layer entries do not count
    assert norm_last(g, net.last_layer) == 4.0
    assert norm_all(np.zeros(5)) == 0.0 and norm_all(np.ones(7)) == 7.0
    one = Mlp(MlpSpec(2, [], 3))
    h = np.random.default_rng(0).normal(size=len(one.params))
    assert norm_all(h) == norm_last(h, one.last_layer)


def test_delta_loss_examples():
    w = LossWindow(1, size=10)
    assert delta_loss(w, 0) == 0.0
    for _ in range(10):
        w.push(0, 2.0)
    assert delta_loss(w, 0) == 0.0  # recent window still empty
    for _ in range(10):
        w.push(0, 1.5)
    assert delta_loss(w, 0) == pytest.approx(0.05)
    w2 = LossWindow(1, size=10)
    for x in [1.0] * 10 + [2.0] * 10:
        w2.push(0, x)
    assert delta_loss(w2, 0) == pytest.approx(-0.1)
    w3 = LossWindow(2, size=3)
    for _ in range(6):
        w3.push(1, 0.7)
    assert delta_loss(w3, 1) == 0.0 and not w3.full(0)


def test_signal_parse_aliases():
    assert SignalKind.parse("NormLast") is SignalKind.NORM_LAST
    assert SignalKind.parse("delta-loss") is SignalKind.DELTA_LOSS
    assert SignalKind.parse("cosine") is SignalKind.GMC_COSINE
    with pytest.raises(ValueError):
        SignalKind.parse("bogus")


def test_gmc_matches_scalar_loop_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 40))
        g, m = rng.normal(size=d), rng.normal(size=d)
        v = m * m + rng.random(d)
        s = state_with(m, v, eps=1e-8)
        got = gmc(g, s, normalize_dim=False)
        want = scalar_gmc(g, m, v, 1e-8)
        assert abs(got - want) <= 1e-12 * abs(want)


def _batch(seed=0, n=12):
    rng = np.random.default_rng(seed)
    net = Mlp(MlpSpec(6, [8, 8], 10), rng)
    x, y = rng.normal(size=(n, 6)), rng.integers(0, 10, size=n)
    return net, x, y


@pytest.mark.parametrize("reduction", ["mean", "none"])
@pytest.mark.parametrize("kind", ["gmc", "gmc_dot", "gmc_cosine", "normall", "normlast"])
def test_batch_rewards_match_single_sample_functions(kind, reduction):
    net, x, y = _batch()
    rng = np.random.default_rng(1)
    state = GmcState(len(net.params))
    for _ in range(5):
        state.update(rng.normal(scale=0.1, size=len(net.params)))
    per = per_sample_gradients(net, x, lambda out, n: cross_entropy_grad(out, y[n:n + 1]))
    if reduction == "mean":
        per = per / len(y)
    logits = net.forward(x)
    net.backward(cross_entropy_grad(logits, y))
    cfg = SignalConfig(kind=SignalKind.parse(kind), grad_reduction=reduction)
    got = batch_rewards(cfg, net, cross_entropy(logits, y), state)
    single = {"gmc": lambda g: gmc(g, state),
              "gmc_dot": lambda g: gmc_dot_product(g, state, normalize_dim=True),
              "gmc_cosine": lambda g: gmc_cosine(g, state),
              "normall": norm_all,
              "normlast": lambda g: norm_last(g, net.last_layer)}[kind]
    want = np.array([single(g) for g in per])
    np.testing.assert_allclose(got, want, rtol=1e-10)


def test_batch_rewards_curiosity_uniform_delta():
    net, x, y = _batch()
    logits = net.forward(x)
    losses = cross_entropy(logits, y)
    net.backward(cross_entropy_grad(logits, y))
    np.testing.assert_array_equal(batch_rewards(SignalConfig(kind=SignalKind.CURIOSITY), net,
                                                losses), losses)
    assert np.all(batch_rewards(SignalConfig(kind=SignalKind.UNIFORM), net, losses) == 0)
    w = LossWindow(4, size=2)
    groups = np.arange(12) % 4
    r = batch_rewards(SignalConfig(kind=SignalKind.DELTA_LOSS, window=2), net, losses,
                      groups=groups, window=w)
    # each group sees 3 samples: only the 4th would fill both windows
    assert np.all(r == 0.0)
    with pytest.raises(ValueError):
        batch_rewards(SignalConfig(kind=SignalKind.GMC), net, losses)


def test_gmc_on_live_training_step_matches_loop():
    net, x, y = _batch(seed=4, n=5)
    state = GmcState(len(net.params), beta0=0.9, beta1=0.9)
    for _ in range(3):
        logits = net.forward(x)
        net.backward(cross_entropy_grad(logits, y))
        state.update(net.params.grads)
        net.params.values -= 0.1 * net.params.grads
    per = per_sample_gradients(net, x, lambda out, n: cross_entropy_grad(out, y[n:n + 1]))
    logits = net.forward(x)
    net.backward(cross_entropy_grad(logits, y))
    got = batch_rewards(SignalConfig(normalize_dim=False, grad_reduction="none"), net,
                        cross_entropy(logits, y), state)
    for n in range(5):
        want = scalar_gmc(per[n], state.m, state.v, state.epsilon)
        assert abs(got[n] - want) <= 1e-12 * want


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2 ** 31 - 1), st.floats(-50, 50))
@example(d=1, seed=35517, c=0.0)  # tiny |g||m|: eps matters
def test_gmc_properties(d, seed, c):
    rng = np.random.default_rng(seed)
    g, m = rng.normal(size=d), rng.normal(size=d)
    s = state_with(m, m * m + rng.random(d), eps=1e-8)
    base = gmc(g, s)
    assert base >= 0
    assert gmc(c * g, s) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)
    assert base * math.sqrt(d) >= gmc_dot_product(g, s) * (1 - 1e-12)
    cos = gmc_cosine(g, s)
    assert 0.0 <= cos <= 1.0 + 1e-12
    # eps in the denominator breaks exact scale invariance only at tiny norms
    norms = np.linalg.norm(g) * np.linalg.norm(m)
    assert gmc_cosine(3.0 * g, s) == pytest.approx(abs(3 * g @ m) / (3 * norms + 1e-8), rel=1e-12)
    if norms > 1e-2:
        assert gmc_cosine(3.0 * g, s) == pytest.approx(cos, rel=1e-6)
