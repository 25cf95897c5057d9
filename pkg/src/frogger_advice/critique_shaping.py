"""
Critique Shaping

This module combines the agent's own Boltzmann distribution with a critique
distribution by elementwise product and renormalisation, and provides the
observation-count critique baseline.

Core Features:
- ``combine``: policy-shaping product of two action distributions
- ``ObservationCritique``: demonstration counts per local view, softened by a temperature schedule
- ``ShapedPolicy``: action source for the Q-only, observation and language agents

Dependencies:
    pip install numpy
"""

from typing import Dict, Iterable, Optional, Protocol, Tuple

import numpy as np

from .frogger_env import N_ACTIONS, Action, GameState, LocalView, local_view, markov_key
from .rl_core import ActionDistribution, QTable, TemperatureSchedule, boltzmann

CRITIQUE_KINDS = ("none", "observation", "language")


class ShapingError(Exception):
    """Raised when two distributions cannot be combined."""

    def __init__(self, message: str, product: Optional[np.ndarray] = None):
        super().__init__(message)
        self.product = product


def combine(prq: ActionDistribution, prc: ActionDistribution) -> ActionDistribution:
    """
    Policy-shaping product: ``out[a] = prq[a] * prc[a] / sum(prq * prc)``.

    Raises:
        ShapingError: If the product has no mass (the distributions share no support)
    """
    product = prq.probs * prc.probs
    total = product.sum()
    if not total > 0.0:
        raise ShapingError("Shaping product is zero for every action", product=product)
    return ActionDistribution(product / total)


class Critique(Protocol):
    """A per-view action distribution that may depend on the training episode."""

    kind: str

    def distribution(self, view: LocalView, episode: int) -> ActionDistribution:
        ...


class ObservationCritique:
    """Demonstration counts per (local view, action), turned into a distribution by ``boltzmann``."""

    kind = "observation"

    def __init__(self, schedule: TemperatureSchedule):
        self.schedule = schedule
        self.counts: Dict[LocalView, np.ndarray] = {}
        self.total = 0

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[LocalView, Action]], schedule: TemperatureSchedule) -> "ObservationCritique":
        critique = cls(schedule)
        for view, action in pairs:
            critique.add(view, action)
        return critique

    def add(self, view: LocalView, action: Action) -> None:
        self.counts.setdefault(view, np.zeros(N_ACTIONS))[int(action)] += 1.0
        self.total += 1

    def distribution(self, view: LocalView, episode: int) -> ActionDistribution:
        return observation_critique(view, self, episode)


def observation_critique(view: LocalView, critique: ObservationCritique, episode: int) -> ActionDistribution:
    """Boltzmann over the demonstration counts of ``view``; unseen views give the uniform distribution."""
    counts = critique.counts.get(view)
    if counts is None:
        return ActionDistribution.uniform()
    return boltzmann(counts, critique.schedule.tau(episode))


class ShapedPolicy:
    """
    Exploration distribution of one agent.

    With no critique this is plain Boltzmann over Q; otherwise the Q side is combined
    with the critique evaluated on the agent's local view.
    """

    def __init__(self, table: QTable, q_tau: float = 1.0, critique: Optional[Critique] = None):
        if q_tau <= 0:
            raise ValueError(f"q_tau must be positive, got {q_tau}")
        self.table = table
        self.q_tau = q_tau
        self.critique = critique

    @property
    def critique_kind(self) -> str:
        return "none" if self.critique is None else self.critique.kind

    def distribution(self, state: GameState, episode: int) -> ActionDistribution:
        return shaped_action_distribution(state, self, episode)


def shaped_action_distribution(state: GameState, policy: ShapedPolicy, episode: int) -> ActionDistribution:
    prq = boltzmann(policy.table.values(markov_key(state)), policy.q_tau)
    if policy.critique is None:
        return prq
    return combine(prq, policy.critique.distribution(local_view(state), episode))
