"""Small POMDP environments with paired target / privileged observations.

All dynamics are deterministic given the reset seed; per-episode layout
randomization comes from the seed alone, so (seed, action sequence) fully
determines an episode. Observations are kept inside [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .rng import Rng


@dataclass
class ObservationBundle:
    target: np.ndarray      # o-, what the deployed policy sees
    privileged: np.ndarray  # op, training-time only

    def scaffolded(self) -> np.ndarray:
        """o+ = [o-, op] by definition."""
        return np.concatenate([self.target, self.privileged])


@dataclass
class StepResult:
    obs: ObservationBundle
    reward: float
    continue_flag: int  # 0 exactly when the episode terminated
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ActionSpace:
    kind: str                 # "discrete" | "continuous"
    n: int = 0                # discrete arity
    dim: int = 0              # continuous dimension
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class EnvSpec:
    name: str
    target_dim: int
    privileged_dim: int
    action_space: ActionSpace
    max_episode_steps: int
    score_kind: str  # "return" | "success"

    def __post_init__(self):
        if self.max_episode_steps <= 0:
            raise ContractError("max_episode_steps must be positive")


class _EpisodeGuard:
    """Shared bookkeeping: step counting and the done contract."""

    spec: EnvSpec

    def __init__(self):
        self._done = True
        self._t = 0

    def _begin(self):
        self._done = False
        self._t = 0

    def _check_step(self):
        if self._done:
            raise ContractError("step() after the episode ended")
        self._t += 1

    def _finish(self, terminated: bool) -> tuple[int, bool]:
        truncated = not terminated and self._t >= self.spec.max_episode_steps
        self._done = terminated or truncated
        return (0 if terminated else 1), truncated


class BlindNav(_EpisodeGuard):
    """Gridworld goal search: the agent senses only its own position.

    15x15 grid. o- is the agent (x, y) scaled to [0, 1]^2; op is the goal
    (x, y) scaled the same way and fixed for the whole episode. Reaching the
    goal pays +1 and terminates; every other step costs 0.01.
    """

    SIZE = 15
    STEP_COST = 0.01
    MOVES = {0: (0, 1), 1: (0, -1), 2: (-1, 0), 3: (1, 0), 4: (0, 0)}  # u d l r stay

    spec = EnvSpec(
        name="blind_nav",
        target_dim=2,
        privileged_dim=2,
        action_space=ActionSpace("discrete", n=5),
        max_episode_steps=100,
        score_kind="return",
    )

    def __init__(self):
        super().__init__()
        self.agent = (0, 0)
        self.goal = (0, 0)

    def _obs(self) -> ObservationBundle:
        s = self.SIZE - 1
        return ObservationBundle(
            target=np.array([self.agent[0] / s, self.agent[1] / s], dtype=np.float32),
            privileged=np.array([self.goal[0] / s, self.goal[1] / s], dtype=np.float32),
        )

    def reset(self, seed: int) -> ObservationBundle:
        rng = Rng(seed)
        self.agent = tuple(int(v) for v in rng.integers(0, self.SIZE, (2,)))
        while True:
            goal = tuple(int(v) for v in rng.integers(0, self.SIZE, (2,)))
            if goal != self.agent:
                self.goal = goal
                break
        self._begin()
        return self._obs()

    def step(self, action: int) -> StepResult:
        self._check_step()
        action = int(action)
        if action not in self.MOVES:
            raise ContractError(f"action {action} outside 0..4")
        dx, dy = self.MOVES[action]
        x = min(max(self.agent[0] + dx, 0), self.SIZE - 1)
        y = min(max(self.agent[1] + dy, 0), self.SIZE - 1)
        self.agent = (x, y)
        terminated = self.agent == self.goal
        reward = 1.0 if terminated else -self.STEP_COST
        cont, truncated = self._finish(terminated)
        return StepResult(self._obs(), reward, cont, {"truncated": truncated})


class CarFlag(_EpisodeGuard):
    """1-D probe-then-go task on the segment [-1, 1].

    The goal flag sits at +/-0.8 (side drawn per episode); a probe flag sits
    at the mirrored point. Touching the probe reveals the goal position
    inside o- for the rest of the episode. Crossing the goal pays +1 and
    terminates; hitting the boundary behind the probe pays -1; other steps
    cost 0.005. o- = [position, revealed?, revealed goal (0 until then)];
    op = [true goal position].
    """

    FLAG = 0.8
    DT = 0.1
    STEP_COST = 0.005
    TOUCH = 0.05

    spec = EnvSpec(
        name="car_flag",
        target_dim=3,
        privileged_dim=1,
        action_space=ActionSpace("continuous", dim=1, low=-1.0, high=1.0),
        max_episode_steps=160,
        score_kind="return",
    )

    def __init__(self):
        super().__init__()
        self.x = 0.0
        self.goal = self.FLAG
        self.revealed = False

    def _obs(self) -> ObservationBundle:
        shown = self.goal if self.revealed else 0.0
        return ObservationBundle(
            target=np.array([self.x, float(self.revealed), shown], dtype=np.float32),
            privileged=np.array([self.goal], dtype=np.float32),
        )

    def reset(self, seed: int) -> ObservationBundle:
        rng = Rng(seed)
        side = 1.0 if float(rng.uniform()) < 0.5 else -1.0
        self.goal = side * self.FLAG
        self.x = float(rng.uniform(dtype=np.float64)) * 1.2 - 0.6
        self.revealed = False
        self._begin()
        return self._obs()

    def step(self, action) -> StepResult:
        self._check_step()
        a = float(np.asarray(action).reshape(-1)[0])
        info = {}
        if abs(a) > 1.0:
            info["clamped_action"] = a
            a = max(-1.0, min(1.0, a))
        prev = self.x
        self.x = max(-1.0, min(1.0, self.x + a * self.DT))
        lo, hi = min(prev, self.x), max(prev, self.x)

        probe = -self.goal
        if lo - self.TOUCH <= probe <= hi + self.TOUCH:
            self.revealed = True

        terminated, reward = False, -self.STEP_COST
        if lo - self.TOUCH <= self.goal <= hi + self.TOUCH:
            terminated, reward = True, 1.0
        elif self.x == -np.sign(self.goal):  # boundary on the wrong side
            terminated, reward = True, -1.0
        cont, truncated = self._finish(terminated)
        info["truncated"] = truncated
        return StepResult(self._obs(), reward, cont, info)


class TouchSearch(_EpisodeGuard):
    """Find the taller of two bumps on a 21-cell strip by pressing.

    o- = [probe position in [-1, 1], touch reading/2 from the last press];
    op = [both bump positions in [-1, 1], +1 if the taller bump is the
    first]. Declaring on the taller bump pays +1, elsewhere -1; both end
    the episode. Moves and presses cost 0.01.
    """

    CELLS = 21
    STEP_COST = 0.01

    spec = EnvSpec(
        name="touch_search",
        target_dim=2,
        privileged_dim=3,
        action_space=ActionSpace("discrete", n=4),  # left right press declare
        max_episode_steps=120,
        score_kind="success",
    )

    def __init__(self):
        super().__init__()
        self.pos = 0
        self.bumps = {0: 1, 1: 2}
        self.reading = 0.0
        self.succeeded = False

    def _norm(self, cell: int) -> float:
        return cell / (self.CELLS - 1) * 2.0 - 1.0

    def _obs(self) -> ObservationBundle:
        c0, c1 = sorted(self.bumps)
        return ObservationBundle(
            target=np.array([self._norm(self.pos), self.reading / 2.0], dtype=np.float32),
            privileged=np.array(
                [self._norm(c0), self._norm(c1), 1.0 if self.bumps[c0] == 2 else -1.0],
                dtype=np.float32,
            ),
        )

    def _big_cell(self) -> int:
        return next(c for c, h in self.bumps.items() if h == 2)

    def reset(self, seed: int) -> ObservationBundle:
        rng = Rng(seed)
        a = int(rng.integers(0, self.CELLS))
        b = int(rng.integers(0, self.CELLS - 1))
        if b >= a:
            b += 1
        big_first = float(rng.uniform()) < 0.5
        self.bumps = {a: 2 if big_first else 1, b: 1 if big_first else 2}
        self.pos = int(rng.integers(0, self.CELLS))
        self.reading = 0.0
        self.succeeded = False
        self._begin()
        return self._obs()

    def step(self, action: int) -> StepResult:
        self._check_step()
        action = int(action)
        if action not in (0, 1, 2, 3):
            raise ContractError(f"action {action} outside 0..3")
        self.reading = 0.0
        terminated, reward = False, -self.STEP_COST
        if action == 0:
            self.pos = max(self.pos - 1, 0)
        elif action == 1:
            self.pos = min(self.pos + 1, self.CELLS - 1)
        elif action == 2:
            self.reading = float(self.bumps.get(self.pos, 0))
        else:
            self.succeeded = self.pos == self._big_cell()
            terminated, reward = True, (1.0 if self.succeeded else -1.0)
        cont, truncated = self._finish(terminated)
        return StepResult(self._obs(), reward, cont, {"truncated": truncated})


def add_observation_noise(bundle: ObservationBundle, sigma: float, rng: Rng) -> ObservationBundle:
    """Perturb the target channel with N(0, sigma^2); privileged untouched."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    if sigma == 0:
        return bundle
    noise = rng.normal(bundle.target.shape, dtype=np.float64) * sigma
    return ObservationBundle(
        target=(bundle.target + noise).astype(np.float32),
        privileged=bundle.privileged,
    )


class NoisyTargetWrapper:
    """Applies add_observation_noise to every emitted bundle."""

    def __init__(self, env, sigma: float = 0.05, seed: int = 0):
        self._env = env
        self.sigma = sigma
        self._rng = Rng(seed)
        self.spec = env.spec

    def reset(self, seed: int) -> ObservationBundle:
        self._rng = Rng(seed ^ 0x5EED)
        return add_observation_noise(self._env.reset(seed), self.sigma, self._rng)

    def step(self, action) -> StepResult:
        res = self._env.step(action)
        return StepResult(add_observation_noise(res.obs, self.sigma, self._rng),
                          res.reward, res.continue_flag, res.info)


class ExposePrivilegedWrapper:
    """Moves op into the target channel: the policy sees o+ directly.

    Used for the privileged upper-bound baseline; the privileged channel
    becomes empty so downstream components see a plain POMDP on o+.
    """

    def __init__(self, env):
        self._env = env
        base = env.spec
        self.spec = EnvSpec(
            name=base.name + "+priv",
            target_dim=base.target_dim + base.privileged_dim,
            privileged_dim=0,
            action_space=base.action_space,
            max_episode_steps=base.max_episode_steps,
            score_kind=base.score_kind,
        )

    @staticmethod
    def _convert(bundle: ObservationBundle) -> ObservationBundle:
        return ObservationBundle(target=bundle.scaffolded(),
                                 privileged=np.zeros(0, dtype=np.float32))

    def reset(self, seed: int) -> ObservationBundle:
        return self._convert(self._env.reset(seed))

    def step(self, action) -> StepResult:
        res = self._env.step(action)
        return StepResult(self._convert(res.obs), res.reward, res.continue_flag, res.info)


class DuplicateTargetWrapper:
    """Replaces op with a copy of o-: scaffolding carries no extra signal."""

    def __init__(self, env):
        self._env = env
        base = env.spec
        self.spec = EnvSpec(
            name=base.name + "+dup",
            target_dim=base.target_dim,
            privileged_dim=base.target_dim,
            action_space=base.action_space,
            max_episode_steps=base.max_episode_steps,
            score_kind=base.score_kind,
        )

    @staticmethod
    def _convert(bundle: ObservationBundle) -> ObservationBundle:
        return ObservationBundle(target=bundle.target, privileged=bundle.target.copy())

    def reset(self, seed: int) -> ObservationBundle:
        return self._convert(self._env.reset(seed))

    def step(self, action) -> StepResult:
        res = self._env.step(action)
        return StepResult(self._convert(res.obs), res.reward, res.continue_flag, res.info)


_REGISTRY = {
    "blind_nav": BlindNav,
    "car_flag": CarFlag,
    "touch_search": TouchSearch,
}


def env_names() -> list[str]:
    return sorted(_REGISTRY)


def make_env(name: str, noise_sigma: float = 0.0, expose_privileged: bool = False,
             duplicate_privileged: bool = False, noise_seed: int = 0):
    """Instantiate an environment by name, with optional wrappers."""
    if name not in _REGISTRY:
        raise ConfigError(f"unknown env {name!r}; valid: {', '.join(env_names())}")
    env = _REGISTRY[name]()
    if duplicate_privileged:
        env = DuplicateTargetWrapper(env)
    if noise_sigma > 0:
        env = NoisyTargetWrapper(env, sigma=noise_sigma, seed=noise_seed)
    if expose_privileged:
        env = ExposePrivilegedWrapper(env)
    return env


def episode_log_lines(steps: list[dict]) -> list[str]:
    """Line-delimited episode records: one JSON object per step.

    Keys: step, action, reward, continue, target_obs, privileged_obs.
    """
    lines = []
    for row in steps:
        lines.append(json.dumps({
            "step": row["step"],
            "action": row["action"],
            "reward": row["reward"],
            "continue": row["continue"],
            "target_obs": [float(v) for v in row["target_obs"]],
            "privileged_obs": [float(v) for v in row["privileged_obs"]],
        }, sort_keys=True))
    return lines
