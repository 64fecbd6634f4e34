"""Interaction protocols: who explores, who acts greedily, who records and who learns at step t.

Agents are 0-indexed and ROMA turns rotate 0, 1, ..., K-1, so the first
collector is the agent without seniors. Steps are 1-indexed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .game import InvalidInputError
from .learners import EXPLORE, GREEDY


class Mode(str, enum.Enum):
    SMA = "SMA"
    ROMA = "ROMA"
    ROMA_ESPC = "ROMA_ESPC"


@dataclass(frozen=True)
class ScheduleConfig:
    mode: Mode
    t_max: int
    t_u: int | None = None
    n_rounds: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))

    def validate(self, num_agents: int) -> list[str]:
        """Problems with this schedule for ``num_agents`` agents; empty when valid."""
        problems = []
        if self.t_max < 0:
            problems.append(f"t_max={self.t_max} must be >= 0")
        if self.mode is Mode.ROMA and (self.t_u is None or self.t_u < 1):
            problems.append("ROMA needs a positive t_u")
        if self.mode is Mode.ROMA_ESPC:
            if self.n_rounds is None or self.n_rounds < 1:
                problems.append("ROMA_ESPC needs a positive n_rounds")
            elif self.t_max % num_agents:
                problems.append(f"t_max={self.t_max} not divisible by {num_agents} agents")
            elif (self.t_max // num_agents) % self.n_rounds:
                problems.append(
                    f"t_star={self.t_max // num_agents} not divisible by n_rounds={self.n_rounds}"
                )
            elif self.t_max == 0:
                problems.append("ROMA_ESPC needs t_max > 0")
        return problems

    def t_star(self, num_agents: int) -> int:
        return self.t_max // num_agents

    def turn_length(self, num_agents: int) -> int:
        if self.mode is Mode.ROMA_ESPC:
            return self.t_star(num_agents) // self.n_rounds
        if self.t_u is None:
            raise InvalidInputError(f"{self.mode.value} has no turn length")
        return self.t_u


@dataclass(frozen=True)
class StepDirective:
    behaviors: tuple[str, ...]
    recording_agents: frozenset[int]
    learning_agents: frozenset[int]


def collector_at(t: int, cfg: ScheduleConfig, num_agents: int) -> int:
    if t <= 0:
        raise InvalidInputError(f"step index must be >= 1, got {t}")
    if cfg.mode is Mode.SMA:
        raise InvalidInputError("SMA has no collector")
    return ((t - 1) // cfg.turn_length(num_agents)) % num_agents


def roles_at(collector: int, num_agents: int) -> tuple[frozenset[int], frozenset[int]]:
    """(seniors, juniors) for the given collector."""
    if not 0 <= collector < num_agents:
        raise InvalidInputError(f"collector {collector} outside [0, {num_agents})")
    return frozenset(range(collector)), frozenset(range(collector + 1, num_agents))


def directive_at(t: int, cfg: ScheduleConfig, num_agents: int) -> StepDirective:
    everyone = frozenset(range(num_agents))
    if cfg.mode is Mode.SMA:
        return StepDirective((EXPLORE,) * num_agents, everyone, everyone)
    c = collector_at(t, cfg, num_agents)
    behaviors = tuple(GREEDY if i < c else EXPLORE for i in range(num_agents))
    if cfg.mode is Mode.ROMA:
        return StepDirective(behaviors, frozenset({c}), everyone)
    # Early stopping: agent i stops learning after (i + 1) * t_star steps;
    # pre-collection: the next collector records alongside the current one.
    t_star = cfg.t_star(num_agents)
    learning = frozenset(i for i in range(num_agents) if t <= (i + 1) * t_star)
    return StepDirective(behaviors, frozenset({c, (c + 1) % num_agents}), learning)


def directive_masks(t_first: int, t_last: int, cfg: ScheduleConfig, num_agents: int):
    """Boolean ``(explore, record, learn)`` arrays of shape (steps, agents) for steps t_first..t_last.

    Row-for-row the same directives as :func:`directive_at`, built without a Python loop.
    """
    if t_first <= 0:
        raise InvalidInputError(f"step index must be >= 1, got {t_first}")
    t = np.arange(t_first, t_last + 1)[:, None]
    agent = np.arange(num_agents)[None, :]
    shape = (len(t), num_agents)
    if cfg.mode is Mode.SMA:
        everyone = np.ones(shape, dtype=np.bool_)
        return everyone, everyone.copy(), everyone.copy()
    c = ((t - 1) // cfg.turn_length(num_agents)) % num_agents
    explore = np.broadcast_to(agent >= c, shape).copy()
    if cfg.mode is Mode.ROMA:
        return explore, np.broadcast_to(agent == c, shape).copy(), np.ones(shape, dtype=np.bool_)
    t_star = cfg.t_star(num_agents)
    record = np.broadcast_to((agent == c) | (agent == (c + 1) % num_agents), shape).copy()
    learn = np.broadcast_to(t <= (agent + 1) * t_star, shape).copy()
    return explore, record, learn


def format_directive(t: int, d: StepDirective) -> str:
    """One log line: ``t behaviors recorders learners``."""
    behaviors = "".join("g" if b == GREEDY else "e" for b in d.behaviors)
    rec = ",".join(map(str, sorted(d.recording_agents)))
    learn = ",".join(map(str, sorted(d.learning_agents)))
    return f"{t} {behaviors} rec={rec} learn={learn}"
