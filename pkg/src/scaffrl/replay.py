"""Episode storage and sequence sampling for world-model training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NotReadyError
from .rng import Rng

COLLECTORS = ("target_policy", "exploration_policy", "scripted")


@dataclass
class EpisodeRecord:
    """One trajectory. Arrays are float32; rewards/continues align with
    transitions, so len(actions) == len(target_obs) - 1."""

    target_obs: np.ndarray      # (T+1, d-)
    privileged_obs: np.ndarray  # (T+1, dp)
    actions: np.ndarray         # (T,) ints for discrete, (T, dim) for continuous
    rewards: np.ndarray         # (T,)
    continues: np.ndarray      # (T,) 0 exactly where the transition terminated
    collector: str
    seed: int

    def __post_init__(self):
        t = len(self.actions)
        if len(self.target_obs) != t + 1 or len(self.privileged_obs) != t + 1:
            raise ContractError(
                f"episode misaligned: {t} actions vs {len(self.target_obs)} observations"
            )
        if len(self.rewards) != t or len(self.continues) != t:
            raise ContractError("rewards/continues must align with transitions")
        if self.collector not in COLLECTORS:
            raise ContractError(f"unknown collector {self.collector!r}")

    @property
    def steps(self) -> int:
        return len(self.actions)


@dataclass
class SequenceBatch:
    """B padded windows of length L with a validity mask.

    reward[b, j] / cont[b, j] describe the transition *into* observation j;
    at a window that opens an episode they are 0 / 1. is_first marks window
    starts (recurrent state resets there).
    """

    target_obs: np.ndarray      # (B, L, d-)
    privileged_obs: np.ndarray  # (B, L, dp)
    prev_action: np.ndarray     # (B, L, A) vectorized, zero at is_first
    reward: np.ndarray          # (B, L)
    cont: np.ndarray            # (B, L)
    is_first: np.ndarray        # (B, L)
    mask: np.ndarray            # (B, L) 1 where the step is real

    @property
    def scaffolded_obs(self) -> np.ndarray:
        return np.concatenate([self.target_obs, self.privileged_obs], axis=-1)


class ReplayBuffer:
    """Ring of episodes with a total-step capacity; oldest evicted first."""

    def __init__(self, capacity_steps: int = 1_000_000):
        self.capacity = int(capacity_steps)
        self.episodes: list[EpisodeRecord] = []
        self.total_steps = 0

    def push(self, episode: EpisodeRecord):
        self.episodes.append(episode)
        self.total_steps += episode.steps
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.pop(0)
            self.total_steps -= evicted.steps

    def __len__(self):
        return len(self.episodes)

    def ready(self, length: int) -> bool:
        return any(ep.steps + 1 >= length for ep in self.episodes)

    def sample_sequences(self, batch: int, length: int, rng: Rng,
                         action_dim: int, discrete: bool) -> SequenceBatch:
        """Uniform over all valid (episode, start) windows.

        Episodes shorter than the window are included once each, padded to
        length with mask=0 (dropping them would starve training of short,
        often successful, episodes).
        """
        if not self.ready(length):
            raise NotReadyError(
                f"no episode with >= {length} observations buffered yet")
        starts: list[tuple[int, int]] = []
        for i, ep in enumerate(self.episodes):
            n_obs = ep.steps + 1
            if n_obs >= length:
                starts.extend((i, s) for s in range(n_obs - length + 1))
            else:
                starts.append((i, 0))
        picks = rng.integers(0, len(starts), (batch,))

        d_t = self.episodes[0].target_obs.shape[1]
        d_p = self.episodes[0].privileged_obs.shape[1]
        out = SequenceBatch(
            target_obs=np.zeros((batch, length, d_t), dtype=np.float32),
            privileged_obs=np.zeros((batch, length, d_p), dtype=np.float32),
            prev_action=np.zeros((batch, length, action_dim), dtype=np.float32),
            reward=np.zeros((batch, length), dtype=np.float32),
            cont=np.ones((batch, length), dtype=np.float32),
            is_first=np.zeros((batch, length), dtype=np.float32),
            mask=np.zeros((batch, length), dtype=np.float32),
        )
        for b, pick in enumerate(picks):
            ep_idx, s = starts[int(pick)]
            ep = self.episodes[ep_idx]
            n = min(length, ep.steps + 1 - s)
            out.target_obs[b, :n] = ep.target_obs[s:s + n]
            out.privileged_obs[b, :n] = ep.privileged_obs[s:s + n]
            out.mask[b, :n] = 1.0
            out.is_first[b, 0] = 1.0
            lo = max(s, 1)            # transitions into obs lo..s+n-1 are real
            j0 = lo - s
            if j0 < n:
                out.reward[b, j0:n] = ep.rewards[lo - 1:s + n - 1]
                out.cont[b, j0:n] = ep.continues[lo - 1:s + n - 1]
                acts = ep.actions[lo - 1:s + n - 1]
                if discrete:
                    out.prev_action[b, np.arange(j0, n), acts.astype(int)] = 1.0
                else:
                    out.prev_action[b, j0:n] = acts.reshape(n - j0, -1)
            out.prev_action[b, 0] = 0.0  # window start acts like an episode start
        return out


def collection_scheduler(episode_index: int, exploration_enabled: bool) -> str:
    """Which policy collects the next episode.

    Strict 1:1 alternation starting with the target policy; variants
    without an exploration policy always collect with the target policy.
    """
    if not exploration_enabled:
        return "target_policy"
    return "target_policy" if episode_index % 2 == 0 else "exploration_policy"
