"""Exact brute-force solvers over the joint game, used as ground truth for learners.

Value semantics: reaching a terminal state ends the episode (bootstrap 0).
With gamma < 1 the solver finds the stationary discounted fixed point and the
horizon plays no role. With gamma == 1 it runs backward induction over the
time-augmented state space (remaining steps 1..horizon) and reports the values
with the full horizon remaining.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

from .game import TabularGame

MAX_TABLE_SIZE = 10**7
MAX_POLICIES = 10**4


class OracleSizeError(RuntimeError):
    """The game is too large for exhaustive solving or enumeration."""


@dataclass
class JointSolution:
    gamma: float
    q_star: np.ndarray  # (S, joint actions), flat joint index
    v_star: np.ndarray  # (S,)
    residual: float
    iterations: int
    q_by_steps_left: np.ndarray | None = None  # (horizon + 1, S, joint) when gamma == 1
    qss_star: dict[tuple[int, int], float] = field(default_factory=dict)
    optimal_policies: list[dict[int, tuple[int, ...]]] = field(default_factory=list)


def _backup(game: TabularGame, v_next: np.ndarray, gamma: float) -> np.ndarray:
    flat = game.transition.reshape(game.num_states, -1)
    r = game.reward[np.arange(game.num_states)[:, None], flat]
    boot = np.where(game._terminal_mask[flat], 0.0, v_next[flat])
    return r + gamma * boot


def bellman_residual(game: TabularGame, q: np.ndarray, gamma: float) -> float:
    """Sup-norm of Q - (r + gamma * max Q(s', .)), terminal bootstrap 0."""
    return float(np.max(np.abs(q - _backup(game, q.max(axis=1), gamma))))


def joint_value_iteration(
    game: TabularGame, gamma: float, tol: float = 1e-9, max_iter: int = 1_000_000
) -> JointSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    size = game.num_states * game.num_joint_actions
    if size > MAX_TABLE_SIZE:
        raise OracleSizeError(
            f"|S|*|A| = {game.num_states}*{game.num_joint_actions} = {size} exceeds {MAX_TABLE_SIZE}"
        )
    if gamma < 1.0:
        v = np.zeros(game.num_states)
        q = _backup(game, v, gamma)
        for it in range(1, max_iter + 1):
            v = q.max(axis=1)
            q_new = _backup(game, v, gamma)
            delta = float(np.max(np.abs(q_new - q)))
            q = q_new
            if delta * gamma < tol * (1.0 - gamma) or delta == 0.0:
                break
        residual = bellman_residual(game, q, gamma)
        return JointSolution(gamma, q, q.max(axis=1), residual, it)

    # gamma == 1: finite horizon, exact after `horizon` backups
    h = game.horizon
    stacked = np.zeros((h + 1, game.num_states, game.num_joint_actions))
    v = np.zeros(game.num_states)
    for left in range(1, h + 1):
        stacked[left] = _backup(game, v, 1.0)
        v = stacked[left].max(axis=1)
    q = stacked[h]
    residual = float(np.max(np.abs(stacked[h] - _backup(game, stacked[h - 1].max(axis=1), 1.0))))
    return JointSolution(1.0, q, q.max(axis=1), residual, h, q_by_steps_left=stacked)


def qss_from_qsa(solution: JointSolution, game: TabularGame) -> dict[tuple[int, int], float]:
    """Q*(s, s') on reachable pairs, read through the transition: Q*(s, T(s, a)) = Q*(s, a).

    Every joint action leading to the same s' must carry the same value; a
    mismatch means the solution is not a fixed point of this game.
    """
    table: dict[tuple[int, int], float] = {}
    q = solution.q_star
    for s in range(game.num_states):
        for i, nxt in enumerate(game.next_states(s).tolist()):
            value = float(q[s, i])
            prev = table.setdefault((s, nxt), value)
            if prev != value:
                raise ValueError(f"Q* differs across joint actions reaching {nxt} from {s}")
    solution.qss_star = table
    return table


def qss_value_iteration(
    game: TabularGame, gamma: float, tol: float = 1e-9, max_iter: int = 1_000_000
) -> dict[tuple[int, int], float]:
    """Independent route to Q*(s, s'): iterate r(s, s') + gamma * max_{s'' in N(s')} Q(s', s'').

    Only meaningful for gamma < 1 (stationary values).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("qss_value_iteration needs gamma in [0, 1)")
    neighbors = [sorted(game.reachable(s)) for s in range(game.num_states)]
    pairs = [(s, nxt) for s in range(game.num_states) for nxt in neighbors[s]]
    src = np.array([p[0] for p in pairs])
    dst = np.array([p[1] for p in pairs])
    r = game.reward[src, dst]
    live = ~game._terminal_mask[dst]
    q = np.zeros(len(pairs))
    for _ in range(max_iter):
        v = np.full(game.num_states, -np.inf)
        np.maximum.at(v, src, q)
        q_new = r + gamma * np.where(live, v[dst], 0.0)
        delta = float(np.max(np.abs(q_new - q))) if len(q) else 0.0
        q = q_new
        if delta * gamma < tol * (1.0 - gamma) or delta == 0.0:
            break
    return {p: float(x) for p, x in zip(pairs, q)}


# -- policies -----------------------------------------------------------------

JointPolicy = Mapping[int, tuple[int, ...]]


def policy_value(game: TabularGame, policy: JointPolicy, gamma: float) -> float:
    """Value of a deterministic stationary joint policy from the initial state.

    gamma < 1: infinite-horizon discounted return, cycles summed in closed form.
    gamma == 1: undiscounted return over ``game.horizon`` steps.
    """
    s = game.initial_state
    if gamma == 1.0:
        total = 0.0
        for _ in range(game.horizon):
            nxt = int(game.transition[(s, *policy[s])])
            total += float(game.reward[s, nxt])
            s = nxt
            if game.is_terminal(s):
                break
        return total
    seen: dict[int, int] = {}
    rewards: list[float] = []
    while s not in seen:
        seen[s] = len(rewards)
        nxt = int(game.transition[(s, *policy[s])])
        rewards.append(float(game.reward[s, nxt]))
        s = nxt
        if game.is_terminal(s):
            return sum(r * gamma**t for t, r in enumerate(rewards))
    start = seen[s]
    prefix = sum(r * gamma**t for t, r in enumerate(rewards[:start]))
    cycle = sum(r * gamma**t for t, r in enumerate(rewards[start:], start))
    return prefix + cycle / (1.0 - gamma ** (len(rewards) - start))


def _optimal_actions(game: TabularGame, solution: JointSolution, s: int, depth: int, tol: float):
    if solution.q_by_steps_left is not None:
        q = solution.q_by_steps_left[game.horizon - depth][s]
    else:
        q = solution.q_star[s]
    best = q.max()
    actions = game.joint_actions()
    return [actions[i] for i in np.flatnonzero(q >= best - tol)]


def enumerate_optimal_joint_policies(
    game: TabularGame, solution: JointSolution, tol: float = 1e-9, limit: int = MAX_POLICIES
) -> list[dict[int, tuple[int, ...]]]:
    """All deterministic stationary joint policies attaining v*(initial state).

    Policies are identified by their choices on the states they actually visit,
    so two policies that differ only off their own path count once.
    """
    target = float(solution.v_star[game.initial_state])
    found: list[dict[int, tuple[int, ...]]] = []
    generated = 0

    def extend(s: int, depth: int, assigned: dict[int, tuple[int, ...]]) -> None:
        nonlocal generated
        done = game.is_terminal(s) and depth > 0
        if solution.gamma == 1.0 and depth == game.horizon:
            done = True
        if not done and s in assigned:
            if solution.gamma < 1.0:
                done = True  # closed a cycle
            else:
                extend(int(game.transition[(s, *assigned[s])]), depth + 1, assigned)
                return
        if done:
            generated += 1
            if generated > limit:
                raise OracleSizeError(f"more than {limit} candidate policies")
            if abs(policy_value(game, assigned, solution.gamma) - target) <= tol * max(1.0, abs(target)):
                found.append(dict(assigned))
            return
        for a in _optimal_actions(game, solution, s, depth, tol):
            assigned[s] = a
            extend(int(game.transition[(s, *a)]), depth + 1, assigned)
            del assigned[s]

    extend(game.initial_state, 0, {})
    solution.optimal_policies = found
    return found


def optimal_return(game: TabularGame) -> float:
    """Best undiscounted episode return (gamma = 1 over the horizon)."""
    return float(joint_value_iteration(game, 1.0).v_star[game.initial_state])


def all_stationary_policies(game: TabularGame, limit: int = 10**3):
    """Every deterministic stationary joint policy (full-state assignments); tiny games only."""
    actions = game.joint_actions()
    count = len(actions) ** game.num_states
    if count > limit:
        raise OracleSizeError(f"{count} stationary policies exceed the limit {limit}")
    for combo in itertools.product(actions, repeat=game.num_states):
        yield dict(enumerate(combo))


def restrict_to_path(game: TabularGame, policy: JointPolicy, gamma: float) -> dict[int, tuple[int, ...]]:
    """The part of ``policy`` that its own rollout from the initial state visits."""
    s, out = game.initial_state, {}
    steps = game.horizon if gamma == 1.0 else game.num_states + 1
    for _ in range(steps):
        if s in out:
            if gamma < 1.0:
                break
        out[s] = tuple(policy[s])
        s = int(game.transition[(s, *policy[s])])
        if game.is_terminal(s):
            break
    return out


# -- set equivalence ------------------------------------------------------------


@dataclass
class SetEquivalenceReport:
    agent: int
    observed: dict[tuple[int, int], set[int]]
    expected: dict[tuple[int, int], set[int]]
    missing: dict[tuple[int, int], set[int]]
    extra: dict[tuple[int, int], set[int]]

    @property
    def passed(self) -> bool:
        return not self.missing and not self.extra

    @property
    def cells(self) -> int:
        return len(self.observed)


def check_set_equivalence(
    game: TabularGame, agent: int, exploration_log: Iterable[tuple[int, int, int]]
) -> SetEquivalenceReport:
    """Compare observed next states per (s, a_k) with {T(s, a_k, a_-k) : all a_-k}."""
    observed: dict[tuple[int, int], set[int]] = {}
    for s, a_k, nxt in exploration_log:
        observed.setdefault((int(s), int(a_k)), set()).add(int(nxt))
    expected = {cell: game.reachable(cell[0], agent, cell[1]) for cell in observed}
    missing = {c: expected[c] - seen for c, seen in observed.items() if expected[c] - seen}
    extra = {c: seen - expected[c] for c, seen in observed.items() if seen - expected[c]}
    return SetEquivalenceReport(agent, observed, expected, missing, extra)


def reachable_under(
    game: TabularGame, s: int, fixed: Mapping[int, Iterable[int]]
) -> set[int]:
    """Next states from ``s`` when agent i may only play actions in ``fixed[i]``; others are free."""
    choices = [
        sorted(set(fixed[i])) if i in fixed else range(n) for i, n in enumerate(game.num_actions)
    ]
    return {int(game.transition[(s, *a)]) for a in itertools.product(*choices)}


def dump_solution(game: TabularGame, solution: JointSolution, out: TextIO) -> None:
    """Text tables: v*, Q*(s, a) and Q*(s, s')."""
    out.write(f"# gamma {solution.gamma!r} residual {solution.residual!r}\n")
    out.write("# v_star: s value\n")
    for s, v in enumerate(solution.v_star.tolist()):
        out.write(f"{s} {v!r}\n")
    out.write("# q_star: s a_1 .. a_K value\n")
    for s in range(game.num_states):
        for i, a in enumerate(game.joint_actions()):
            out.write(f"{s} {' '.join(map(str, a))} {float(solution.q_star[s, i])!r}\n")
    qss = solution.qss_star or qss_from_qsa(solution, game)
    out.write("# qss_star: s s_next value\n")
    for (s, nxt), v in sorted(qss.items()):
        out.write(f"{s} {nxt} {v!r}\n")
    if solution.optimal_policies:
        out.write("# optimal joint policies: state:joint_action ...\n")
        for pol in solution.optimal_policies:
            out.write(" ".join(f"{s}:{','.join(map(str, a))}" for s, a in sorted(pol.items())) + "\n")
