"""Builders for the coordination games and the small diagnostic games used in tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import InvalidInputError, TabularGame

REWARD_SUCCESS = 100.0
REWARD_DIVERGENT = -200.0

L, R = 0, 1


def build_two_optima_matrix_game(
    reward_success: float = REWARD_SUCCESS, reward_divergent: float = REWARD_DIVERGENT
) -> TabularGame:
    """One-shot 2x2 coordination game: (L, L) and (R, R) succeed, mixed pairs are fined.

    State 0 is the start; states 1..4 are the destinations LL, LR, RL, RR.
    """
    dest = {(L, L): 1, (L, R): 2, (R, L): 3, (R, R): 4}
    transition = np.zeros((5, 2, 2), dtype=np.int64)
    reward = np.full((5, 5), np.nan)
    for (a0, a1), d in dest.items():
        transition[0, a0, a1] = d
        reward[0, d] = reward_success if a0 == a1 else reward_divergent
    for d in dest.values():
        transition[d] = d
        reward[d, d] = 0.0
    return TabularGame(
        num_agents=2,
        num_states=5,
        num_actions=(2, 2),
        transition=transition,
        reward=reward,
        initial_state=0,
        horizon=1,
        terminal_states=frozenset(dest.values()),
        state_labels={0: "start", 1: "LL", 2: "LR", 3: "RL", 4: "RR"},
        action_labels={0: ("L", "R"), 1: ("L", "R")},
    )


@dataclass
class StagedGameSpec:
    """Multi-stage coordination game with exactly two successful joint strategies.

    ``optimal_paths`` holds two sequences of ``num_stages`` joint actions. When left
    empty, they are drawn from ``rng_seed`` with every agent's two path actions
    distinct at every stage.
    """

    num_agents: int = 3
    num_stages: int = 3
    actions_per_stage: int = 3
    optimal_paths: list[list[tuple[int, ...]]] = field(default_factory=list)
    reward_success: float = REWARD_SUCCESS
    reward_divergent: float = REWARD_DIVERGENT
    suboptimal_reward_range: tuple[float, float] = (0.0, 10.0)
    rng_seed: int = 0

    def check(self) -> list[str]:
        failed = []
        if self.num_agents < 1:
            failed.append("num_agents must be positive")
        if self.num_stages < 1:
            failed.append("num_stages must be positive")
        if self.actions_per_stage < 2:
            failed.append("actions_per_stage must be at least 2")
        low, high = self.suboptimal_reward_range
        if low > high:
            failed.append("suboptimal_reward_range low exceeds high")
        if not self.reward_success > high > self.reward_divergent:
            failed.append("need reward_success > suboptimal high > reward_divergent")
        if self.optimal_paths:
            if len(self.optimal_paths) != 2:
                failed.append(f"exactly two optimal paths required, got {len(self.optimal_paths)}")
            else:
                for p, path in enumerate(self.optimal_paths):
                    if len(path) != self.num_stages:
                        failed.append(f"optimal path {p} has {len(path)} stages, expected {self.num_stages}")
                    for a in path:
                        if len(a) != self.num_agents or not all(
                            0 <= x < self.actions_per_stage for x in a
                        ):
                            failed.append(f"optimal path {p} has an invalid joint action {tuple(a)}")
                a_path, b_path = self.optimal_paths
                if len(a_path) == len(b_path) and any(
                    tuple(x) == tuple(y) for x, y in zip(a_path, b_path)
                ):
                    failed.append("optimal paths must differ at every stage")
        return failed

    def resolved_paths(self) -> tuple[list[tuple[int, ...]], list[tuple[int, ...]]]:
        if self.optimal_paths:
            a, b = self.optimal_paths
            return [tuple(x) for x in a], [tuple(x) for x in b]
        rng = np.random.default_rng(self.rng_seed)
        a_path, b_path = [], []
        for _ in range(self.num_stages):
            picks = [rng.choice(self.actions_per_stage, size=2, replace=False) for _ in range(self.num_agents)]
            a_path.append(tuple(int(p[0]) for p in picks))
            b_path.append(tuple(int(p[1]) for p in picks))
        return a_path, b_path


def build_staged_game(spec: StagedGameSpec) -> TabularGame:
    """Staged coordination game over compressed progress signatures.

    A state is ``(stage, signature)`` where the signature records whether the
    joint choices so far all followed path A, all followed path B, mixed the two
    (every agent on one of its two path actions, but not consistently), or left
    both paths. Leaving both paths ends the episode at once in a terminal state
    keyed by the stage and the set of agents that went off, paying a fixed reward
    drawn from ``suboptimal_reward_range``. A mixture also ends the episode at
    once and pays ``reward_divergent``. Following one path through the final
    stage pays ``reward_success``. Every other transition pays 0.
    """
    failed = spec.check()
    if failed:
        raise InvalidInputError("invalid StagedGameSpec: " + "; ".join(failed))
    k, stages, n = spec.num_agents, spec.num_stages, spec.actions_per_stage
    a_path, b_path = spec.resolved_paths()
    joint = [tuple(int(x) for x in idx) for idx in np.ndindex(*(n,) * k)]

    def advance(key: tuple, a: tuple[int, ...]) -> tuple:
        stage = key[0] + 1
        on_a = [a[i] == a_path[stage - 1][i] for i in range(k)]
        on_b = [a[i] == b_path[stage - 1][i] for i in range(k)]
        prior = key[1]
        off = tuple(i for i in range(k) if not (on_a[i] or on_b[i]))
        if off:
            return (stage, "OFF", off)
        if all(on_a) and prior in ("START", "A"):
            return (stage, "A")
        if all(on_b) and prior in ("START", "B"):
            return (stage, "B")
        return (stage, "MIX")

    start = (0, "START")
    ids: dict[tuple, int] = {start: 0}
    order = [start]
    edges: dict[int, list[int]] = {}
    frontier = [start]
    for _ in range(stages):
        nxt_frontier = []
        for key in frontier:
            row = []
            for a in joint:
                nxt = advance(key, a)
                if nxt not in ids:
                    ids[nxt] = len(order)
                    order.append(nxt)
                    if nxt[1] not in ("OFF", "MIX"):
                        nxt_frontier.append(nxt)
                row.append(ids[nxt])
            edges[ids[key]] = row
        frontier = nxt_frontier

    num_states = len(order)
    transition = np.zeros((num_states, n ** k), dtype=np.int64)
    reward = np.full((num_states, num_states), np.nan)
    terminal = frozenset(ids[key] for key in order if key[0] == stages or key[1] in ("OFF", "MIX"))
    rng = np.random.default_rng(spec.rng_seed)
    low, high = spec.suboptimal_reward_range
    final_reward = {}
    for key in order:
        if key[1] == "OFF":
            final_reward[ids[key]] = float(rng.uniform(low, high))
        elif key[1] == "MIX":
            final_reward[ids[key]] = spec.reward_divergent
        elif key[0] != stages:
            continue
        elif key[1] in ("A", "B"):
            final_reward[ids[key]] = spec.reward_success
        else:
            final_reward[ids[key]] = spec.reward_divergent
    for s in range(num_states):
        if s in terminal:
            transition[s] = s
            reward[s, s] = 0.0
            continue
        transition[s] = edges[s]
        for nxt in edges[s]:
            reward[s, nxt] = final_reward.get(nxt, 0.0)

    labels = {ids[key]: _label(key) for key in order}
    return TabularGame(
        num_agents=k,
        num_states=num_states,
        num_actions=(n,) * k,
        transition=transition.reshape((num_states,) + (n,) * k),
        reward=reward,
        initial_state=0,
        horizon=stages,
        terminal_states=terminal,
        state_labels=labels,
    )


def _label(key: tuple) -> str:
    if key[1] == "OFF":
        return f"{key[0]}:OFF:" + "".join(map(str, key[2]))
    return f"{key[0]}:{key[1]}"


ADVANCE, STAY = 0, 1


def build_single_agent_chain(n: int, horizon: int | None = None) -> TabularGame:
    """Chain of ``n`` states; advancing into the last state pays 1, everything else 0."""
    if n < 2:
        raise InvalidInputError(f"chain needs n >= 2, got {n}")
    transition = np.zeros((n, 2), dtype=np.int64)
    reward = np.full((n, n), np.nan)
    for i in range(n - 1):
        transition[i, ADVANCE] = i + 1
        transition[i, STAY] = i
        reward[i, i + 1] = 1.0 if i + 1 == n - 1 else 0.0
        reward[i, i] = 0.0
    transition[n - 1] = n - 1
    reward[n - 1, n - 1] = 0.0
    return TabularGame(
        num_agents=1,
        num_states=n,
        num_actions=(2,),
        transition=transition,
        reward=reward,
        initial_state=0,
        horizon=horizon if horizon is not None else n - 1,
        terminal_states=frozenset({n - 1}),
        action_labels={0: ("advance", "stay")},
    )


def build_random_game(
    num_agents: int,
    num_states: int,
    num_actions: Sequence[int] | int,
    rng_seed: int,
    terminal_fraction: float = 0.1,
    horizon: int = 10,
    reward_range: tuple[float, float] = (-1.0, 1.0),
) -> TabularGame:
    """Random deterministic game; terminal states (if any) are zero-reward self-loops."""
    rng = np.random.default_rng(rng_seed)
    if isinstance(num_actions, int):
        num_actions = (num_actions,) * num_agents
    shape = (num_states, *num_actions)
    transition = rng.integers(0, num_states, size=shape)
    n_terminal = int(round(terminal_fraction * num_states))
    terminal: frozenset[int] = frozenset()
    if num_states > 1 and n_terminal:
        picks = rng.choice(np.arange(1, num_states), size=min(n_terminal, num_states - 1), replace=False)
        terminal = frozenset(int(s) for s in picks)
    pair_reward = rng.uniform(*reward_range, size=(num_states, num_states))
    for s in terminal:
        transition[s] = s
        pair_reward[s, s] = 0.0
    reward = np.full((num_states, num_states), np.nan)
    flat = transition.reshape(num_states, -1)
    for s in range(num_states):
        nxt = np.unique(flat[s])
        reward[s, nxt] = pair_reward[s, nxt]
    return TabularGame(
        num_agents=num_agents,
        num_states=num_states,
        num_actions=tuple(num_actions),
        transition=transition,
        reward=reward,
        initial_state=0,
        horizon=horizon,
        terminal_states=terminal,
    )
