import math

import numpy as np
import pytest
from scipy import stats

from gmc.bandit_env import (CLASS_TO_GROUP, GROUPS, ActionSpace, BanditEnv, Mode,
                            default_action_space, noise_level)
from gmc.datasets import SyntheticSpec, generate_synthetic
from gmc.selection_policy import Actor, ActorConfig, entropy


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(SyntheticSpec(input_dim=8, samples_per_class=30))


def test_groups_partition_classes():
    flat = sorted(c for g in GROUPS for c in g)
    assert flat == list(range(10))
    assert [noise_level(g) for g in range(4)] == pytest.approx([0.0, 0.5, 2 / 3, 0.75])
    assert default_action_space(Mode.CURRICULUM) is ActionSpace.PER_CLASS
    assert ActionSpace.PER_GROUP.n == 4 and ActionSpace.PER_CLASS.n == 10


def test_action_space_must_match_mode(data):
    with pytest.raises(ValueError):
        BanditEnv(data, "curriculum", action_space="per_group")
    with pytest.raises(ValueError):
        BanditEnv(data, "noise", action_space="per_class")


def test_invalid_action(data):
    env = BanditEnv(data, "noise")
    with pytest.raises(IndexError):
        env.step(4)
    with pytest.raises(IndexError):
        env.step_batch([0, -1])


def test_noise_group_a_always_label_zero(data):
    env = BanditEnv(data, "noise", seed=1)
    b = env.step_batch(np.zeros(500, int))
    assert np.all(b.labels == 0) and np.all(b.groups == 0)


def test_noise_group_d_agreement_rate(data):
    env = BanditEnv(data, "noise", seed=2)
    b = env.step_batch(np.full(10_000, 3))
    original = data.labels[b.sample_ids]
    assert abs(np.mean(b.labels == original) - 0.25) <= 0.02
    counts = np.bincount(b.labels, minlength=10)[6:]
    assert stats.chisquare(counts).pvalue > 1e-3
    # labels stay inside the served image's group
    assert np.all(CLASS_TO_GROUP[b.labels] == b.groups)


def test_curriculum_labels_permanent_and_in_group(data):
    env = BanditEnv(data, "curriculum", seed=3)
    b1 = env.step_batch(np.repeat(np.arange(10), 200))
    b2 = env.step_batch(np.repeat(np.arange(10), 200))
    lab = {}
    for ids, labels in ((b1.sample_ids, b1.labels), (b2.sample_ids, b2.labels)):
        for i, y in zip(ids, labels):
            assert lab.setdefault(int(i), int(y)) == y
    assert np.all(CLASS_TO_GROUP[b1.labels] == CLASS_TO_GROUP[data.labels[b1.sample_ids]])
    # the served image belongs to the chosen class
    np.testing.assert_array_equal(data.labels[b1.sample_ids], b1.actions)
    again = BanditEnv(data, "curriculum", seed=3)
    np.testing.assert_array_equal(env.scramble, again.scramble)


def test_eval_set_targets(data):
    x, t, g = BanditEnv(data, "noise").eval_set(5)
    assert x.shape == (20, 8)
    np.testing.assert_allclose(t.sum(1), 1.0)
    np.testing.assert_allclose(t[g == 3][:, 6:], 0.25)
    _, t2, g2 = BanditEnv(data, "curriculum").eval_set(5)
    assert len(g2) == 50 and set(np.unique(t2)) == {0.0, 1.0}


# -- selection policy ---------------------------------------------------------

def make_actor(n=4, seed=0, **kw):
    return Actor(ActorConfig(n, hidden_dims=(16, 16), **kw), np.random.default_rng(seed))


def test_actor_probs_normalised_and_reproducible():
    d1 = make_actor().act(np.random.default_rng(5), 50)
    d2 = make_actor().act(np.random.default_rng(5), 50)
    np.testing.assert_allclose(d1.probs.sum(1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(d1.actions, d2.actions)
    # torch-style init keeps a fresh full-size actor close to uniform
    full = Actor(ActorConfig(4), np.random.default_rng(0)).act(np.random.default_rng(5), 50)
    assert entropy(full.probs).min() > 0.95 * math.log(4)


def test_entropy_uniform():
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert entropy(np.array([1.0, 0.0])) == 0.0


def test_zero_reward_increases_entropy():
    actor = make_actor(lr=1e-2, entropy_weight=0.5)
    actor.net.bias(actor.net.n_layers - 1)[:] = [2.0, 0.0, -1.0, 0.5]
    rng = np.random.default_rng(0)
    d = actor.act(rng, 64)
    h0 = entropy(actor.act(np.random.default_rng(1), 256).probs).mean()
    actor.policy_update(d, np.zeros(64))
    h1 = entropy(actor.act(np.random.default_rng(1), 256).probs).mean()
    assert h1 > h0


def test_positive_reward_raises_probability():
    actor = make_actor(lr=1e-2, entropy_weight=0.0)
    d = actor.act(np.random.default_rng(0), 32)
    d.actions[:] = 2
    before = actor.act(np.random.default_rng(9), 128).probs[:, 2].mean()
    actor.policy_update(d, np.ones(32))
    after = actor.act(np.random.default_rng(9), 128).probs[:, 2].mean()
    assert after > before


def test_nan_reward_rejected():
    actor = make_actor()
    d = actor.act(np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        actor.policy_update(d, np.array([0.0, np.nan, 1.0]))


def test_policy_gradient_matches_finite_differences():
    actor = make_actor(n=3, seed=2, entropy_weight=0.3)
    d = actor.act(np.random.default_rng(0), 6)
    r = np.random.default_rng(1).normal(size=6)
    vals = actor.net.params.values
    # analytic gradient without stepping: reproduce policy_update's backward
    saved = vals.copy()
    actor.opt.lr = 0.0
    actor.policy_update(d, r)
    analytic = actor.net.params.grads.copy()
    np.testing.assert_array_equal(vals, saved)
    h = 1e-6
    for i in np.random.default_rng(3).choice(len(vals), 25, replace=False):
        vals[i] += h
        lp = actor.loss(d, r)
        vals[i] -= 2 * h
        lm = actor.loss(d, r)
        vals[i] += h
        num = (lp - lm) / (2 * h)
        assert abs(num - analytic[i]) <= 1e-4 * (abs(analytic[i]) + 1e-6)


def test_uniform_signal_drives_policy_towards_uniform():
    actor = make_actor(lr=3e-3, entropy_weight=0.05)
    actor.net.bias(actor.net.n_layers - 1)[:] = [1.5, 0.0, -1.0, 0.0]
    rng = np.random.default_rng(0)
    for _ in range(300):
        d = actor.act(rng, 32)
        actor.policy_update(d, np.zeros(32))
        assert np.all((d.probs > 0) & (d.probs < 1))
    probs = actor.act(np.random.default_rng(1), 256).probs.mean(0)
    assert np.max(np.abs(probs - 0.25)) < 0.05
