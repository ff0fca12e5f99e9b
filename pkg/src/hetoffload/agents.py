"""Small-BS ON/OFF control policies and their training machinery.

All policies share one estimator surface: ``fit(env)`` trains on a
:class:`~hetoffload.env.DecisionWindows` view of the training split and
``predict(env)`` returns an integer action (number of active small BSs)
for every macrocell and decision window, shape ``(C, J)``.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import nn
from .env import DecisionWindows
from .exceptions import ConfigError, EmptyMemoryError
from .forecast import BaseForecaster, OracleForecaster, load_forecaster, save_forecaster

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


class ReplayMemory:
    """Bounded FIFO of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int = 10_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, transition) -> None:
        self._items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> list:
        if not self._items:
            raise EmptyMemoryError("cannot sample from an empty replay memory")
        rng = self._rng if rng is None else rng
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def replay_push(memory: ReplayMemory, transition) -> None:
    memory.push(transition)


def replay_sample(memory: ReplayMemory, batch_size: int, rng: np.random.Generator | None = None) -> list:
    return memory.sample(batch_size, rng)


def normalize_state(stats, rate_m: float, t_r: float) -> np.ndarray:
    """Express (min, avg, max) megabits as macro demand rates."""
    capacity = rate_m * t_r
    if not capacity > 0:
        raise ValueError("macro capacity must be > 0")
    return np.asarray(stats, dtype=float) / capacity


def ql_quantize(stats, data_size: float, step: float, max_bins: int | None = None) -> tuple[int, ...]:
    """Megabits -> activities -> bins of ``step`` activities."""
    if not step > 0:
        raise ValueError("step must be > 0")
    bins = []
    for value in stats:
        b = int(math.floor(float(value) / data_size / step + 1e-9))
        if max_bins is not None:
            b = min(b, max_bins - 1)
        bins.append(b)
    return tuple(bins)


class QTable:
    """Sparse action-value table; unseen states read as zeros."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.values: dict[tuple, np.ndarray] = {}
        self.visits: dict[tuple, int] = {}

    def __len__(self):
        return len(self.values)

    def __contains__(self, state):
        return tuple(state) in self.values

    def get(self, state) -> np.ndarray:
        row = self.values.get(tuple(state))
        return np.zeros(self.n_actions) if row is None else row.copy()

    def _row(self, state) -> np.ndarray:
        key = tuple(state)
        if key not in self.values:
            self.values[key] = np.zeros(self.n_actions)
            self.visits[key] = 0
        return self.values[key]


def ql_update(table: QTable, s, a: int, r: float, s_next, lr: float, discount: float) -> None:
    """``Q(s,a) += lr * (r + discount * max Q(s') - Q(s,a))``."""
    if lr == 0:
        return
    target = r + discount * float(np.max(table.get(s_next)))
    row = table._row(s)
    row[a] += lr * (target - row[a])
    table.visits[tuple(s)] += 1


def greedy(q_values: np.ndarray) -> np.ndarray:
    """Argmax over the last axis, lowest index on ties."""
    return np.argmax(q_values, axis=-1)


def select_action(agent, state, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over ``agent.q_values(state)``."""
    q = np.asarray(agent.q_values(state), dtype=float)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(0, q.shape[-1]))
    return int(greedy(q))


class DqnAgent:
    """Online and target Q-networks plus replay, shared by every macrocell."""

    def __init__(self, n_actions: int, hidden=(512, 512), learning_rate=0.001, discount=0.9,
                 target_sync=200, replay_capacity=10_000, seed=0, n_inputs: int = 3):
        self.n_actions = n_actions
        self.learning_rate = learning_rate
        self.discount = discount
        self.target_sync = target_sync
        self.online = nn.init_weights((n_inputs, *hidden, n_actions), seed)
        self.target = self.online.copy()
        self.memory = ReplayMemory(replay_capacity, seed=seed + 1)
        self.train_steps = 0

    def q_values(self, state) -> np.ndarray:
        return nn.forward(self.online, state)


def dqn_train_step(agent: DqnAgent, batch: Sequence[Transition]) -> float:
    """One replay minibatch update of the online net; syncs the target net
    every ``agent.target_sync`` calls. Returns the mean squared TD error."""
    if not batch:
        raise ValueError("batch must not be empty")
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    actions = np.fromiter((t.action for t in batch), dtype=int, count=len(batch))
    rewards = np.fromiter((t.reward for t in batch), dtype=float, count=len(batch))
    targets = rewards + agent.discount * nn.forward(agent.target, next_states).max(axis=1)
    loss = nn.td_batch_step(agent.online, states, targets, actions, agent.learning_rate)
    agent.train_steps += 1
    if agent.train_steps % agent.target_sync == 0:
        nn.clone_into(agent.online, agent.target)
    return loss


# --------------------------------------------------------------------------
# Policies


class OffloadingPolicy(BaseEstimator):
    """Base class; subclasses set ``scheme``."""

    scheme = "base"

    def fit(self, env: DecisionWindows, y=None):
        self.k_small_ = env.layout.k_small
        self.training_log_ = []
        return self

    def predict(self, env: DecisionWindows) -> np.ndarray:
        raise NotImplementedError

    # checkpoint hooks -----------------------------------------------------
    def _save_state(self, directory: Path) -> dict:
        return {}

    def _load_state(self, directory: Path, manifest: dict) -> None:
        pass


class MacroPolicy(OffloadingPolicy):
    """Macro BS only: never switch a small BS on."""

    scheme = "macro"

    def __init__(self, k_small: int = 10):
        self.k_small = k_small

    def predict(self, env: DecisionWindows) -> np.ndarray:
        return np.zeros((env.n_macrocells, env.n_decisions), dtype=int)


class StaticPolicy(OffloadingPolicy):
    """All K small BSs always on."""

    scheme = "static"

    def __init__(self, k_small: int = 10):
        self.k_small = k_small

    def predict(self, env: DecisionWindows) -> np.ndarray:
        return np.full((env.n_macrocells, env.n_decisions), env.layout.k_small, dtype=int)


def macro_policy(state) -> int:
    return 0


def static_policy(state, k_small: int = 10) -> int:
    return k_small


class _LearningPolicy(OffloadingPolicy):
    """Shared epsilon-greedy training loop over decision windows.

    One epoch is one chronological pass over the training windows; within a
    decision round the macrocells are visited round-robin and all feed the
    same learner.
    """

    def _states(self, env: DecisionWindows) -> np.ndarray:
        raise NotImplementedError

    def _q_batch(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _learn(self, state, action, reward, next_state, rng) -> float | None:
        raise NotImplementedError

    def _setup(self, env: DecisionWindows) -> None:
        raise NotImplementedError

    def fit(self, env: DecisionWindows, y=None):
        if env.n_decisions < 2:
            raise ConfigError("training needs at least two decision windows")
        super().fit(env)
        self._setup(env)
        states = self._states(env)
        rewards = env.table.reward
        n_actions = env.layout.k_small + 1
        rng = np.random.default_rng(self.seed + 7)
        for epoch in range(self.epochs):
            losses, collected = [], []
            for j in range(env.n_decisions - 1):
                q = self._q_batch(states[:, j])
                explore = rng.random(env.n_macrocells) < self.epsilon
                random_actions = rng.integers(0, n_actions, size=env.n_macrocells)
                actions = np.where(explore, random_actions, greedy(q))
                for c in range(env.n_macrocells):
                    a = int(actions[c])
                    r = float(rewards[c, j, a])
                    collected.append(r)
                    loss = self._learn(states[c, j], a, r, states[c, j + 1], rng)
                    if loss is not None:
                        losses.append(loss)
            greedy_actions = greedy(self._q_batch(states.reshape(-1, states.shape[-1])))
            entry = {
                "epoch": epoch,
                "mean_reward": float(np.mean(collected)),
                "greedy_reward": float(env.pick("reward", greedy_actions.reshape(states.shape[:2])).mean()),
                "mean_loss": float(np.mean(losses)) if losses else None,
            }
            self.training_log_.append(entry)
            logger.info("%s epoch %d: %s", self.scheme, epoch, entry)
        return self

    def predict(self, env: DecisionWindows) -> np.ndarray:
        check_is_fitted(self, "training_log_")
        states = self._states(env)
        return greedy(self._q_batch(states.reshape(-1, states.shape[-1]))).reshape(states.shape[:2])


class QLearningPolicy(_LearningPolicy):
    """Tabular Q-learning on quantized current-window statistics."""

    scheme = "ql"

    def __init__(self, learning_rate=0.1, discount=0.9, epsilon=0.1, epochs=5,
                 quant_step=20, data_size=15.0, max_bins=200, seed=0):
        self.learning_rate = learning_rate
        self.discount = discount
        self.epsilon = epsilon
        self.epochs = epochs
        self.quant_step = quant_step
        self.data_size = data_size
        self.max_bins = max_bins
        self.seed = seed

    def _setup(self, env):
        self.table_ = QTable(env.layout.k_small + 1)

    def _states(self, env):
        bins = np.floor(env.observed / self.data_size / self.quant_step + 1e-9).astype(int)
        return np.minimum(bins, self.max_bins - 1)

    def _q_batch(self, states):
        return np.stack([self.table_.get(s) for s in states])

    def _learn(self, state, action, reward, next_state, rng):
        ql_update(self.table_, tuple(state), action, reward, tuple(next_state),
                  self.learning_rate, self.discount)
        return None

    def _save_state(self, directory):
        rows = [
            {"state": list(map(int, k)), "values": v.tolist(), "visits": self.table_.visits[k]}
            for k, v in sorted(self.table_.values.items())
        ]
        (directory / "qtable.json").write_text(json.dumps(rows))
        return {"n_states": len(rows)}

    def _load_state(self, directory, manifest):
        self.table_ = QTable(manifest["k_small"] + 1)
        for row in json.loads((directory / "qtable.json").read_text()):
            key = tuple(row["state"])
            self.table_.values[key] = np.asarray(row["values"], dtype=float)
            self.table_.visits[key] = row["visits"]


class DqnPolicy(_LearningPolicy):
    """Deep Q-network on normalized current-window statistics.

    ``reward_scale`` multiplies rewards before they enter the replay memory;
    a positive scale leaves the greedy policy unchanged but keeps TD errors
    in a range plain gradient descent can follow.
    """

    scheme = "dqn"

    def __init__(self, hidden=(512, 512), learning_rate=0.001, discount=0.9, epsilon=0.1,
                 target_sync=200, replay_capacity=10_000, batch_size=32, train_every=4,
                 epochs=5, reward_scale=0.01, seed=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.discount = discount
        self.epsilon = epsilon
        self.target_sync = target_sync
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.train_every = train_every
        self.epochs = epochs
        self.reward_scale = reward_scale
        self.seed = seed

    def _setup(self, env):
        self.agent_ = DqnAgent(
            env.layout.k_small + 1, hidden=tuple(self.hidden), learning_rate=self.learning_rate,
            discount=self.discount, target_sync=self.target_sync,
            replay_capacity=self.replay_capacity, seed=self.seed,
        )
        self._pushes = 0

    def _states(self, env):
        return env.observed / env.capacity

    def _q_batch(self, states):
        return nn.forward(self.agent_.online, states)

    def _learn(self, state, action, reward, next_state, rng):
        agent = self.agent_
        agent.memory.push(Transition(state, action, reward * self.reward_scale, next_state))
        self._pushes += 1
        if self._pushes % self.train_every or len(agent.memory) < self.batch_size:
            return None
        return dqn_train_step(agent, agent.memory.sample(self.batch_size, rng))

    def q_values(self, state) -> np.ndarray:
        check_is_fitted(self, "agent_")
        return nn.forward(self.agent_.online, state)

    def _save_state(self, directory):
        nn.save_weights(self.agent_.online, directory / "online.bin")
        nn.save_weights(self.agent_.target, directory / "target.bin")
        return {"train_steps": self.agent_.train_steps}

    def _load_state(self, directory, manifest):
        agent = DqnAgent(manifest["k_small"] + 1, hidden=tuple(self.hidden), seed=self.seed)
        agent.online = nn.load_weights(directory / "online.bin")
        agent.target = nn.load_weights(directory / "target.bin")
        agent.train_steps = manifest["train_steps"]
        self.agent_ = agent


class DqnForecastPolicy(DqnPolicy):
    """DQN whose state is the forecast of the upcoming window's statistics."""

    scheme = "dqn-f"

    def __init__(self, forecaster: BaseForecaster | None = None, hidden=(512, 512),
                 learning_rate=0.001, discount=0.9, epsilon=0.1, target_sync=200,
                 replay_capacity=10_000, batch_size=32, train_every=4, epochs=5,
                 reward_scale=0.01, seed=0):
        super().__init__(hidden=hidden, learning_rate=learning_rate, discount=discount,
                         epsilon=epsilon, target_sync=target_sync,
                         replay_capacity=replay_capacity, batch_size=batch_size,
                         train_every=train_every, epochs=epochs, reward_scale=reward_scale,
                         seed=seed)
        self.forecaster = forecaster

    def _setup(self, env):
        if self.forecaster is None:
            forecaster = OracleForecaster(window=env.window, horizon=env.horizon)
        else:
            forecaster = self.forecaster
        if not hasattr(forecaster, "n_macrocells_"):
            forecaster = clone(forecaster).fit(env.series)
        self.forecaster_ = forecaster
        super()._setup(env)

    def _states(self, env):
        if isinstance(self.forecaster_, OracleForecaster):
            return env.upcoming / env.capacity
        return self.forecaster_.predict(env.series, env.starts) / env.capacity

    def _save_state(self, directory):
        save_forecaster(self.forecaster_, directory / "forecaster")
        return super()._save_state(directory)

    def _load_state(self, directory, manifest):
        super()._load_state(directory, manifest)
        self.forecaster_ = load_forecaster(directory / "forecaster")


SCHEMES = {
    "macro": MacroPolicy,
    "static": StaticPolicy,
    "ql": QLearningPolicy,
    "dqn": DqnPolicy,
    "dqn-f": DqnForecastPolicy,
}


def save_checkpoint(policy: OffloadingPolicy, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus scheme-specific weight files."""
    check_is_fitted(policy, "k_small_")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in policy.get_params(deep=False).items() if k != "forecaster"}
    params = json.loads(json.dumps(params, default=list))
    manifest = {
        "version": CHECKPOINT_VERSION,
        "scheme": policy.scheme,
        "k_small": policy.k_small_,
        "params": params,
        "training_log": policy.training_log_,
        **(extra or {}),
    }
    manifest.update(policy._save_state(directory))
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return directory


def load_checkpoint(directory) -> tuple[OffloadingPolicy, dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint manifest in {directory}: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION or manifest.get("scheme") not in SCHEMES:
        raise ConfigError(f"incompatible checkpoint in {directory}")
    params = dict(manifest["params"])
    if "hidden" in params:
        params["hidden"] = tuple(params["hidden"])
    policy = SCHEMES[manifest["scheme"]](**params)
    policy.k_small_ = manifest["k_small"]
    policy.training_log_ = manifest.get("training_log", [])
    policy._load_state(directory, manifest)
    return policy, manifest

