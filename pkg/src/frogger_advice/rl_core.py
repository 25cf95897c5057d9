"""
Tabular Q-learning Core

This module provides tabular Q-learning with Boltzmann exploration: the Q-table,
the Boltzmann transform that produces every action distribution in the workbench,
temperature schedules, the online training episode loop and greedy evaluation.

Core Features:
- ``ActionDistribution``: validated probabilities over the 5 actions
- ``boltzmann``: overflow-safe softmax at a temperature
- ``QTable`` / ``q_update``: Watkins Q-learning with zero-initialised entries
- ``TemperatureSchedule``: constant / linear / geometric, non-decreasing in episode
- ``run_episode`` / ``evaluate_policy``: training and greedy evaluation rollouts
- QTable snapshot files for debugging and pinned tests

Dependencies:
    pip install numpy
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np

from .frogger_env import (
    ALIVE,
    N_ACTIONS,
    Action,
    FroggerEnv,
    GameState,
    markov_key,
)

StateKey = Tuple[int, int, int]


class DistributionError(Exception):
    """Custom exception for invalid action-value inputs or distributions."""

    def __init__(self, message: str, values: Optional[Iterable[float]] = None):
        super().__init__(message)
        self.values = None if values is None else list(values)


class ActionDistribution:
    """Probabilities over the 5 actions (UP, DOWN, LEFT, RIGHT, STAY)."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (N_ACTIONS,):
            raise DistributionError(f"Expected {N_ACTIONS} probabilities, got shape {probs.shape}", probs)
        if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
            raise DistributionError("Probabilities must be finite and non-negative", probs)
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DistributionError(f"Probabilities sum to {probs.sum()!r}, not 1", probs)
        self.probs = probs

    @classmethod
    def uniform(cls) -> "ActionDistribution":
        return cls(np.full(N_ACTIONS, 1.0 / N_ACTIONS))

    def __getitem__(self, action) -> float:
        return float(self.probs[int(action)])

    def __repr__(self) -> str:
        return "ActionDistribution(" + ", ".join(f"{a.name}={p:.4f}" for a, p in zip(Action, self.probs)) + ")"

    def argmax(self) -> Action:
        return Action(int(np.argmax(self.probs)))

    def sample(self, rng: np.random.Generator) -> Action:
        return Action(int(rng.choice(N_ACTIONS, p=self.probs)))

    def total_variation(self, other: "ActionDistribution") -> float:
        return 0.5 * float(np.abs(self.probs - other.probs).sum())


def boltzmann(values, tau: float) -> ActionDistribution:
    """
    Softmax of ``values / tau`` (Boltzmann exploration).

    Args:
        values: 5 action values
        tau: Temperature, > 0

    Returns:
        ActionDistribution with strictly positive entries for finite inputs

    Raises:
        DistributionError: If tau <= 0 or any value is non-finite
    """
    values = np.asarray(values, dtype=np.float64)
    if tau <= 0.0 or not np.isfinite(tau):
        raise DistributionError(f"Temperature must be positive and finite, got {tau}")
    if not np.all(np.isfinite(values)):
        raise DistributionError("Action values must be finite", values)
    scaled = (values - values.max()) / tau
    weights = np.exp(scaled)
    return ActionDistribution(weights / weights.sum())


def greedy_distribution(values) -> ActionDistribution:
    """Uniform distribution over the argmax set (greedy with random tie-breaking)."""
    values = np.asarray(values, dtype=np.float64)
    best = values == values.max()
    return ActionDistribution(best / best.sum())


# ---------------------------------------------------------------------------
# Temperature schedules
# ---------------------------------------------------------------------------

SCHEDULE_SHAPES = ("constant", "linear", "geometric")


@dataclass(frozen=True)
class TemperatureSchedule:
    """Non-decreasing temperature: ``tau(0) = tau0`` and ``tau(e >= horizon) = tau_max``."""

    tau0: float
    tau_max: float
    horizon: int
    shape: str = "linear"

    def __post_init__(self):
        if self.shape not in SCHEDULE_SHAPES:
            raise ValueError(f"Unknown schedule shape '{self.shape}', expected one of {SCHEDULE_SHAPES}")
        if self.tau0 <= 0.0:
            raise ValueError(f"tau0 must be positive, got {self.tau0}")
        if self.tau_max < self.tau0:
            raise ValueError(f"tau_max ({self.tau_max}) must be >= tau0 ({self.tau0})")
        if self.shape == "constant" and self.tau_max != self.tau0:
            raise ValueError("A constant schedule needs tau_max == tau0")
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @classmethod
    def constant(cls, tau: float) -> "TemperatureSchedule":
        return cls(tau0=tau, tau_max=tau, horizon=1, shape="constant")

    @classmethod
    def from_config(cls, settings: Dict[str, Any], episode_budget: int) -> "TemperatureSchedule":
        """Build a schedule from a ``{shape, tau0, tau_max, horizon_fraction}`` mapping."""
        shape = settings.get("shape", "linear")
        tau0 = float(settings["tau0"])
        if shape == "constant":
            return cls.constant(tau0)
        horizon = max(1, int(round(float(settings.get("horizon_fraction", 0.6)) * episode_budget)))
        return cls(tau0=tau0, tau_max=float(settings["tau_max"]), horizon=horizon, shape=shape)

    @property
    def label(self) -> str:
        if self.shape == "constant":
            return f"constant-{self.tau0:g}"
        return f"{self.shape}-{self.tau0:g}-{self.tau_max:g}-h{self.horizon}"

    def tau(self, episode: int) -> float:
        if self.shape == "constant":
            return self.tau0
        progress = min(max(episode, 0) / self.horizon, 1.0)
        if progress >= 1.0:
            return self.tau_max
        if self.shape == "linear":
            return self.tau0 + (self.tau_max - self.tau0) * progress
        return self.tau0 * (self.tau_max / self.tau0) ** progress


# ---------------------------------------------------------------------------
# Q-table
# ---------------------------------------------------------------------------


class QTable:
    """
    Tabular action values keyed by the Markov state key.

    Missing entries read as ``initial`` (0.0 by default).
    """

    def __init__(self, alpha: float = 0.1, gamma: float = 0.95, initial: float = 0.0):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = alpha
        self.gamma = gamma
        self.initial = initial
        self.entries: Dict[StateKey, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def values(self, key: StateKey) -> np.ndarray:
        """Return a copy of the 5 action values for ``key``."""
        row = self.entries.get(key)
        if row is None:
            return np.full(N_ACTIONS, self.initial, dtype=np.float64)
        return row.copy()

    def max_value(self, key: StateKey) -> float:
        row = self.entries.get(key)
        return self.initial if row is None else float(row.max())

    def copy(self) -> "QTable":
        other = QTable(self.alpha, self.gamma, self.initial)
        other.entries = {k: v.copy() for k, v in self.entries.items()}
        return other


def q_update(table: QTable, key: StateKey, action, reward: float, next_key: StateKey,
             terminal: bool) -> QTable:
    """
    Apply one Watkins Q-learning update in place.

    ``Q(key, a) <- Q + alpha * (r + gamma * max_a' Q(next, a') - Q)``; the max term is 0
    when ``terminal``.

    Returns:
        The same table, for chaining
    """
    row = table.entries.get(key)
    if row is None:
        row = np.full(N_ACTIONS, table.initial, dtype=np.float64)
        table.entries[key] = row
    bootstrap = 0.0 if terminal else table.gamma * table.max_value(next_key)
    a = int(action)
    row[a] += table.alpha * (reward + bootstrap - row[a])
    return table


def save_qtable(table: QTable) -> str:
    """
    Render a QTable snapshot.

    Format: a ``# alpha gamma initial`` header line, then one line per key sorted by
    key: ``col row phase<TAB>v0 v1 v2 v3 v4`` with round-tripping float reprs.
    """
    lines = [f"# qtable alpha={table.alpha!r} gamma={table.gamma!r} initial={table.initial!r}"]
    for key in sorted(table.entries):
        values = " ".join(repr(float(v)) for v in table.entries[key])
        lines.append(f"{key[0]} {key[1]} {key[2]}\t{values}")
    return "\n".join(lines) + "\n"


def load_qtable(text: str) -> QTable:
    """Parse a snapshot written by ``save_qtable``."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# qtable"):
        raise ValueError("Not a QTable snapshot (missing '# qtable' header)")
    params = dict(part.split("=", 1) for part in lines[0].split()[2:])
    table = QTable(float(params["alpha"]), float(params["gamma"]), float(params["initial"]))
    for line in lines[1:]:
        if not line.strip():
            continue
        key_text, values_text = line.split("\t")
        key = tuple(int(x) for x in key_text.split())
        table.entries[key] = np.array([float(v) for v in values_text.split()], dtype=np.float64)
    return table


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


class ActionSource(Protocol):
    """Anything that yields an action distribution for a state at a training episode."""

    def distribution(self, state: GameState, episode: int) -> ActionDistribution:
        ...


class BoltzmannSource:
    """Plain Boltzmann exploration over the Q-table (the Q-learning agent)."""

    def __init__(self, table: QTable, tau: float = 1.0):
        self.table = table
        self.tau = tau

    def distribution(self, state: GameState, episode: int) -> ActionDistribution:
        return boltzmann(self.table.values(markov_key(state)), self.tau)


class GreedySource:
    """Greedy over the Q-table with uniform random tie-breaking."""

    def __init__(self, table: QTable):
        self.table = table

    def distribution(self, state: GameState, episode: int) -> ActionDistribution:
        return greedy_distribution(self.table.values(markov_key(state)))


@dataclass(frozen=True)
class EpisodeLimits:
    step_cap: int = 200


@dataclass
class EpisodeTrace:
    steps: List[Tuple[StateKey, Action, float]] = field(default_factory=list)
    total_reward: float = 0.0
    terminal: str = ALIVE
    final_state: Optional[GameState] = None

    def __len__(self) -> int:
        return len(self.steps)


def run_episode(env: FroggerEnv, table: QTable, action_source: ActionSource,
                limits: Optional[EpisodeLimits] = None, rng: Optional[np.random.Generator] = None,
                episode: int = 0, learn: bool = True, start: Optional[GameState] = None) -> EpisodeTrace:
    """
    Roll out one episode, applying ``q_update`` online after each step.

    Args:
        env: Environment (map, dynamics, goal row)
        table: Q-table updated in place when ``learn`` is True
        action_source: Yields the action distribution per state
        limits: Step cap (defaults to the environment's)
        rng: Generator for action sampling and stochastic dynamics
        episode: Training episode index passed to the action source (temperature schedules)
        learn: False for evaluation rollouts
        start: Initial state (defaults to ``env.reset()``)

    Returns:
        EpisodeTrace with the visited (key, action, reward) triples and the total reward

    Raises:
        EnvironmentContractError: Propagated from the environment
    """
    rng = rng if rng is not None else np.random.default_rng()
    step_cap = limits.step_cap if limits is not None else env.step_cap
    state = start if start is not None else env.reset()
    trace = EpisodeTrace()

    for _ in range(step_cap):
        key = markov_key(state)
        action = action_source.distribution(state, episode).sample(rng)
        next_state, reward = env.step(state, action, rng)
        done = next_state.terminal != ALIVE
        if learn:
            q_update(table, key, action, reward, markov_key(next_state), done)
        trace.steps.append((key, action, reward))
        trace.total_reward += reward
        state = next_state
        if done:
            break

    trace.terminal = state.terminal
    trace.final_state = state
    return trace


def evaluate_policy(env: FroggerEnv, table: QTable, episodes: int,
                    rng: Optional[np.random.Generator] = None, seed: Optional[int] = None) -> float:
    """
    Mean total reward of the greedy policy over ``episodes`` rollouts.

    No learning and no critique; the table is never mutated.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be positive, got {episodes}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    source = GreedySource(table)
    totals = [run_episode(env, table, source, rng=rng, learn=False).total_reward for _ in range(episodes)]
    return float(np.mean(totals))
