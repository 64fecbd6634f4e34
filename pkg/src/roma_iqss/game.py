"""Finite deterministic Markov games: representation, stepping, episodes and the game file format."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised for unknown states, out-of-range actions or malformed game data."""


class Experience(NamedTuple):
    """One agent's private view of a step: own action only."""

    s: int
    a_k: int
    s_next: int
    r: float


class Transition(NamedTuple):
    """Global view of a step, kept by the environment and never handed to decentralized learners."""

    s: int
    a: tuple[int, ...]
    s_next: int
    r: float


Policy = Callable[[int, random.Random], int]


@dataclass(eq=False)
class TabularGame:
    """Deterministic Markov game with a shared reward r(s, s').

    ``transition`` has shape ``(num_states, *num_actions)`` and holds next-state ids.
    ``reward`` is a dense ``(num_states, num_states)`` table; entries for pairs that
    are not reachable through ``transition`` are NaN.
    """

    num_agents: int
    num_states: int
    num_actions: tuple[int, ...]
    transition: np.ndarray
    reward: np.ndarray
    initial_state: int
    horizon: int
    terminal_states: frozenset[int] = frozenset()
    state_labels: dict[int, str] = field(default_factory=dict)
    action_labels: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.num_actions = tuple(int(n) for n in self.num_actions)
        self.transition = np.asarray(self.transition, dtype=np.int64)
        self.reward = np.asarray(self.reward, dtype=float)
        self.terminal_states = frozenset(int(s) for s in self.terminal_states)
        self.validate()
        self._flat = self.transition.reshape(self.num_states, -1)
        self._terminal_mask = np.zeros(self.num_states, dtype=bool)
        self._terminal_mask[list(self.terminal_states)] = True

    def validate(self) -> None:
        if self.num_agents < 1:
            raise InvalidInputError(f"num_agents must be positive, got {self.num_agents}")
        if len(self.num_actions) != self.num_agents:
            raise InvalidInputError(
                f"expected {self.num_agents} action-set sizes, got {len(self.num_actions)}"
            )
        for k, n in enumerate(self.num_actions):
            if n < 1:
                raise InvalidInputError(f"agent {k} has an empty action set")
        if self.num_states < 1:
            raise InvalidInputError("a game needs at least one state")
        expected = (self.num_states, *self.num_actions)
        if self.transition.shape != expected:
            raise InvalidInputError(f"transition shape {self.transition.shape} != {expected}")
        if self.transition.size and (
            self.transition.min() < 0 or self.transition.max() >= self.num_states
        ):
            raise InvalidInputError("transition references an unknown state")
        if self.reward.shape != (self.num_states, self.num_states):
            raise InvalidInputError(f"reward shape {self.reward.shape} is not (S, S)")
        flat = self.transition.reshape(self.num_states, -1)
        src = np.repeat(np.arange(self.num_states), flat.shape[1])
        if np.isnan(self.reward[src, flat.ravel()]).any():
            raise InvalidInputError("reward undefined for a reachable (s, s') pair")
        if not 0 <= self.initial_state < self.num_states:
            raise InvalidInputError(f"initial state {self.initial_state} is not a state")
        if self.horizon < 1:
            raise InvalidInputError(f"horizon must be positive, got {self.horizon}")
        bad = [s for s in self.terminal_states if not 0 <= s < self.num_states]
        if bad:
            raise InvalidInputError(f"terminal states {bad} are not states")

    # -- joint action helpers -------------------------------------------------

    @property
    def num_joint_actions(self) -> int:
        return int(np.prod(self.num_actions))

    def joint_actions(self) -> list[tuple[int, ...]]:
        """All joint actions in row-major order, matching :meth:`joint_index`."""
        return list(itertools.product(*(range(n) for n in self.num_actions)))

    def joint_index(self, a: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(a), self.num_actions))

    def is_terminal(self, s: int) -> bool:
        return bool(self._terminal_mask[s])

    def next_states(self, s: int) -> np.ndarray:
        """Next state for every joint action at ``s`` (flat joint index order)."""
        return self._flat[s]

    def reachable(self, s: int, agent: int | None = None, action: int | None = None) -> set[int]:
        """States reachable from ``s``; optionally with ``agent`` fixed to ``action``."""
        if agent is None:
            return set(self._flat[s].tolist())
        index = [slice(None)] * self.num_agents
        index[agent] = action
        return set(np.unique(self.transition[(s, *index)]).tolist())

    # -- dynamics ---------------------------------------------------------------

    def check_state(self, s: int) -> None:
        if not 0 <= s < self.num_states:
            raise InvalidInputError(f"unknown state {s}")

    def check_action(self, a: Sequence[int]) -> None:
        if len(a) != self.num_agents:
            raise InvalidInputError(
                f"joint action has {len(a)} components, game has {self.num_agents} agents"
            )
        for k, (ak, n) in enumerate(zip(a, self.num_actions)):
            if not 0 <= ak < n:
                raise InvalidInputError(f"agent {k}: action {ak} outside [0, {n})")


def step(game: TabularGame, s: int, a: Sequence[int]) -> tuple[int, float]:
    """Apply joint action ``a`` in state ``s``; returns ``(s', r(s, s'))``."""
    game.check_state(s)
    game.check_action(a)
    s_next = int(game.transition[(s, *a)])
    return s_next, float(game.reward[s, s_next])


def run_episode(
    game: TabularGame, policies: Sequence[Policy], rng_seed: int
) -> tuple[list[Transition], float]:
    """Roll out one episode from the initial state.

    Each policy is called as ``policy(state, rng)`` and must return an action
    index for its agent. Stops after ``game.horizon`` steps or on a terminal state.
    """
    if len(policies) != game.num_agents:
        raise InvalidInputError(f"need {game.num_agents} policies, got {len(policies)}")
    rng = random.Random(rng_seed)
    s = game.initial_state
    trajectory: list[Transition] = []
    total = 0.0
    for _ in range(game.horizon):
        a = tuple(int(pi(s, rng)) for pi in policies)
        s_next, r = step(game, s, a)
        trajectory.append(Transition(s, a, s_next, r))
        total += r
        s = s_next
        if game.is_terminal(s):
            break
    return trajectory, total


# -- game file format -----------------------------------------------------------
#
#   num_agents K
#   num_states S
#   actions n_1 ... n_K
#   initial s0
#   horizon H
#   terminal t_1 ... t_m        (optional)
#   s a_1 ... a_K s' r          (one line per (s, a); every pair must be listed)
#
# Blank lines and text after '#' are ignored.

_HEADER_KEYS = ("num_agents", "num_states", "actions", "initial", "horizon")


def loads_game(text: str) -> TabularGame:
    header: dict[str, list[int]] = {}
    rows: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] in _HEADER_KEYS or parts[0] == "terminal":
            try:
                header[parts[0]] = [int(x) for x in parts[1:]]
            except ValueError:
                raise InvalidInputError(f"line {lineno}: non-integer header value") from None
        else:
            rows.append((lineno, parts))
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise InvalidInputError(f"game file header missing {missing}")
    k = header["num_agents"][0]
    n_states = header["num_states"][0]
    actions = tuple(header["actions"])
    if len(actions) != k:
        raise InvalidInputError(f"'actions' lists {len(actions)} sizes for {k} agents")

    transition = np.full((n_states, *actions), -1, dtype=np.int64)
    reward = np.full((n_states, n_states), np.nan)
    for lineno, parts in rows:
        if len(parts) != k + 3:
            raise InvalidInputError(f"line {lineno}: expected {k + 3} fields, got {len(parts)}")
        try:
            s, *a, s_next = (int(x) for x in parts[:-1])
            r = float(parts[-1])
        except ValueError:
            raise InvalidInputError(f"line {lineno}: malformed transition") from None
        if not (0 <= s < n_states and 0 <= s_next < n_states):
            raise InvalidInputError(f"line {lineno}: unknown state")
        for agent, (ak, n) in enumerate(zip(a, actions)):
            if not 0 <= ak < n:
                raise InvalidInputError(f"line {lineno}: agent {agent} action {ak} out of range")
        if transition[(s, *a)] != -1:
            raise InvalidInputError(f"line {lineno}: duplicate transition for {(s, *a)}")
        transition[(s, *a)] = s_next
        if not np.isnan(reward[s, s_next]) and reward[s, s_next] != r:
            raise InvalidInputError(
                f"line {lineno}: reward for ({s}, {s_next}) conflicts with an earlier line"
            )
        reward[s, s_next] = r
    unlisted = np.argwhere(transition < 0)
    if len(unlisted):
        first = tuple(int(x) for x in unlisted[0])
        raise InvalidInputError(f"{len(unlisted)} unlisted (s, a) pairs, first: {first}")
    return TabularGame(
        num_agents=k,
        num_states=n_states,
        num_actions=actions,
        transition=transition,
        reward=reward,
        initial_state=header["initial"][0],
        horizon=header["horizon"][0],
        terminal_states=frozenset(header.get("terminal", [])),
    )


def dumps_game(game: TabularGame) -> str:
    lines = [
        f"num_agents {game.num_agents}",
        f"num_states {game.num_states}",
        "actions " + " ".join(map(str, game.num_actions)),
        f"initial {game.initial_state}",
        f"horizon {game.horizon}",
    ]
    if game.terminal_states:
        lines.append("terminal " + " ".join(map(str, sorted(game.terminal_states))))
    for s in range(game.num_states):
        for a in game.joint_actions():
            s_next = int(game.transition[(s, *a)])
            lines.append(f"{s} {' '.join(map(str, a))} {s_next} {float(game.reward[s, s_next])!r}")
    return "\n".join(lines) + "\n"


def load_game(path: str | Path) -> TabularGame:
    return loads_game(Path(path).read_text())


def save_game(game: TabularGame, path: str | Path) -> None:
    Path(path).write_text(dumps_game(game))
