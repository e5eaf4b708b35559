"""Replay buffer sampling and the dual-policy collection schedule."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaffrl.errors import ContractError, NotReadyError
from scaffrl.replay import (EpisodeRecord, ReplayBuffer, SequenceBatch,
                            collection_scheduler)
from scaffrl.rng import Rng


def make_episode(steps, collector="target_policy", seed=0, mark=0.0):
    t = np.arange(steps + 1, dtype=np.float32)
    return EpisodeRecord(
        target_obs=np.stack([t, np.full(steps + 1, mark, np.float32)], axis=1),
        privileged_obs=t[:, None] + 100.0,
        actions=np.arange(steps, dtype=np.float32) % 3,
        rewards=np.full(steps, 0.5, np.float32),
        continues=np.concatenate([np.ones(steps - 1, np.float32), [0.0]]),
        collector=collector,
        seed=seed,
    )


def test_malformed_episode_rejected():
    with pytest.raises(ContractError):
        EpisodeRecord(
            target_obs=np.zeros((5, 2), np.float32),
            privileged_obs=np.zeros((5, 1), np.float32),
            actions=np.zeros(5, np.float32),  # should be 4
            rewards=np.zeros(5, np.float32),
            continues=np.zeros(5, np.float32),
            collector="target_policy",
            seed=0,
        )


def test_single_episode_buffer_samples_only_it():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(20, mark=7.0))
    batch = buf.sample_sequences(8, 5, Rng(0), action_dim=3, discrete=True)
    assert np.all(batch.target_obs[..., 1][batch.mask.astype(bool)] == 7.0)


def test_eviction_is_oldest_first():
    buf = ReplayBuffer(100)
    for k in range(3):
        buf.push(make_episode(50, seed=k))
    assert len(buf) == 2
    assert [ep.seed for ep in buf.episodes] == [1, 2]
    assert buf.total_steps == 100


def test_collector_tag_preserved():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(10, collector="exploration_policy", seed=42))
    ep = buf.episodes[0]
    assert ep.collector == "exploration_policy" and ep.seed == 42


def test_whole_episode_window():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(10))
    batch = buf.sample_sequences(4, 11, Rng(1), action_dim=3, discrete=True)
    assert np.all(batch.mask == 1.0)
    np.testing.assert_array_equal(batch.target_obs[0, :, 0], np.arange(11))
    # transition data lines up: reward 0 at the episode start, 0.5 after
    assert batch.reward[0, 0] == 0.0
    assert np.all(batch.reward[0, 1:] == 0.5)
    assert batch.cont[0, -1] == 0.0


def test_not_ready_signal():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(3))
    with pytest.raises(NotReadyError):
        buf.sample_sequences(2, 10, Rng(0), action_dim=3, discrete=True)


def test_two_equal_episodes_sampled_evenly():
    buf = ReplayBuffer(10_000)
    buf.push(make_episode(40, mark=0.0))
    buf.push(make_episode(40, mark=1.0))
    rng = Rng(5)
    counts = np.zeros(2)
    n = 100_000
    batch_size = 250
    for _ in range(n // batch_size):
        batch = buf.sample_sequences(batch_size, 8, rng, action_dim=3, discrete=True)
        marks = batch.target_obs[:, 0, 1]
        counts[1] += marks.sum()
        counts[0] += batch_size - marks.sum()
    share = counts / n
    assert abs(share[0] - 0.5) < 0.01 and abs(share[1] - 0.5) < 0.01


def test_short_episode_padded_with_mask():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(30))
    buf.push(make_episode(4))  # shorter than the window
    rng = Rng(2)
    seen_short = False
    for _ in range(50):
        batch = buf.sample_sequences(4, 10, rng, action_dim=3, discrete=True)
        lengths = batch.mask.sum(axis=1)
        for b, n in enumerate(lengths):
            if n < 10:
                seen_short = True
                assert n == 5
                assert np.all(batch.target_obs[b, int(n):] == 0.0)
    assert seen_short


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=2, max_value=25), min_size=1, max_size=6),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_windows_never_span_episodes(lengths, seed):
    # first target_obs column counts steps within its episode, so any window
    # crossing a boundary would break monotone +1 increments
    buf = ReplayBuffer(100_000)
    for i, n in enumerate(lengths):
        buf.push(make_episode(n, mark=float(i)))
    length = 6
    if not buf.ready(length):
        return
    batch = buf.sample_sequences(16, length, Rng(seed), action_dim=3, discrete=True)
    for b in range(16):
        n = int(batch.mask[b].sum())
        marks = batch.target_obs[b, :n, 1]
        assert len(set(marks.tolist())) == 1
        steps = batch.target_obs[b, :n, 0]
        np.testing.assert_allclose(np.diff(steps), 1.0)


def test_strip_consistency_scaffolded_view():
    buf = ReplayBuffer(1000)
    buf.push(make_episode(20))
    batch = buf.sample_sequences(3, 6, Rng(3), action_dim=3, discrete=True)
    combined = batch.scaffolded_obs
    np.testing.assert_array_equal(combined[..., :2], batch.target_obs)
    np.testing.assert_array_equal(combined[..., 2:], batch.privileged_obs)


def test_scheduler_alternates_one_to_one():
    picks = [collection_scheduler(i, True) for i in range(4)]
    assert picks == ["target_policy", "exploration_policy",
                     "target_policy", "exploration_policy"]


def test_scheduler_without_exploration_always_target():
    assert all(collection_scheduler(i, False) == "target_policy" for i in range(10))


def test_scheduler_exact_split_over_1000():
    picks = [collection_scheduler(i, True) for i in range(1000)]
    assert picks.count("target_policy") == 500
    assert picks.count("exploration_policy") == 500
