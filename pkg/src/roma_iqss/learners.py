"""Tabular value learners sharing one record / learn / act interface.

``IqssLearner`` and ``IndqLearner`` are decentralized: they only ever see their
own :class:`~roma_iqss.game.Experience` tuples. ``CentralLearner`` is the
centralized baseline (cenQ or cQSS) and consumes global transitions.

The decentralized tables are dense arrays over (state, state) or
(state, own action). Each per-sample rule is a small compiled function; the
public single-sample methods and the mini-batch kernels call the same ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numba
import numpy as np

from .game import Experience, Transition
from .transition_model import (
    DEFAULT_DECAY,
    DEFAULT_DELTA,
    RESCALE_AT,
    TransitionModel,
    cell_likelihood,
    observe_cell,
)

GREEDY = "greedy"
EXPLORE = "explore"
NO_STATE = -1


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.8
    delta: float = DEFAULT_DELTA
    decay: float = DEFAULT_DECAY
    batch_size: int = 32
    buffer_size: int = 0  # 0 keeps every experience

    def __post_init__(self) -> None:
        problems = []
        if not 0.0 < self.alpha <= 1.0:
            problems.append(f"alpha={self.alpha} not in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append(f"gamma={self.gamma} not in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            problems.append(f"epsilon={self.epsilon} not in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            problems.append(f"delta={self.delta} not in (0, 1)")
        if not 0.0 < self.decay <= 1.0:
            problems.append(f"decay={self.decay} not in (0, 1]")
        if self.batch_size < 1:
            problems.append(f"batch_size={self.batch_size} must be positive")
        if self.buffer_size < 0:
            problems.append(f"buffer_size={self.buffer_size} must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


# -- replay --------------------------------------------------------------------------


class ExperienceBuffer:
    """Experience tuples in flat arrays; a ring buffer when ``capacity`` > 0.

    ``meta`` holds ``[size, next_slot]`` so compiled code can append in place.
    """

    def __init__(self, capacity: int = 0):
        self.capacity = capacity
        size = capacity or 1024
        self.transitions = np.empty((size, 3), dtype=np.int64)  # s, a_k, s'
        self.rewards = np.empty(size)
        self.meta = np.zeros(2, dtype=np.int64)

    @property
    def size(self) -> int:
        return int(self.meta[0])

    def reserve(self, extra: int) -> None:
        """Make room for ``extra`` more appends without reallocating."""
        need = self.size + extra
        if self.capacity or need <= len(self.rewards):
            return
        grown = max(need, 2 * len(self.rewards))
        transitions = np.empty((grown, 3), dtype=np.int64)
        rewards = np.empty(grown)
        transitions[: self.size] = self.transitions[: self.size]
        rewards[: self.size] = self.rewards[: self.size]
        self.transitions, self.rewards = transitions, rewards

    def append(self, e: Experience) -> None:
        self.reserve(1)
        buffer_append(self.transitions, self.rewards, self.meta, self.capacity, e.s, e.a_k, e.s_next, e.r)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, self.size, size=n)

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[Experience]:
        size, nxt = int(self.meta[0]), int(self.meta[1])
        if self.capacity and size == self.capacity:
            order = itertools.chain(range(nxt, size), range(nxt))
        else:
            order = range(size)
        for i in order:
            s, a, s_next = self.transitions[i]
            yield Experience(int(s), int(a), int(s_next), float(self.rewards[i]))


@numba.njit(cache=True)
def buffer_append(transitions, rewards, meta, capacity, s, a, s_next, r):
    if capacity > 0:
        i = meta[1]
        meta[1] = (i + 1) % capacity
        meta[0] = min(meta[0] + 1, capacity)
    else:
        i = meta[0]
        meta[0] += 1
    transitions[i, 0] = s
    transitions[i, 1] = a
    transitions[i, 2] = s_next
    rewards[i] = r


class ReplayBuffer:
    """Plain list replay for arbitrary items; a ring buffer when ``capacity`` > 0."""

    def __init__(self, capacity: int = 0):
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def append(self, item) -> None:
        if self.capacity and len(self._items) == self.capacity:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity
        else:
            self._items.append(item)

    def sample(self, rng: np.random.Generator, n: int) -> list:
        return [self._items[i] for i in rng.integers(0, len(self._items), size=n)]

    def __len__(self) -> int:
        return len(self._items)


# -- compiled per-sample rules ------------------------------------------------------------
#
# The small functions below state each rule on its own and back the public
# single-step methods. ``_iqss_batch`` fuses them into one loop body because
# jitted calls taking arrays are not inlined and dominate the cost otherwise;
# tests check it against ``_iqss_sample``, the plain composition of the rules.


@numba.njit(cache=True)
def _update_zhat(weights, totals, z_hat, q_ss, s, a, cand, delta):
    if cell_likelihood(weights, totals, s, a, cand) <= delta:
        return
    z = z_hat[s, a]
    if z < 0 or cell_likelihood(weights, totals, s, a, z) <= delta:
        z_hat[s, a] = cand
    elif q_ss[s, z] < q_ss[s, cand]:
        z_hat[s, a] = cand


@numba.njit(cache=True)
def _repair_zhat(weights, totals, z_hat, q_ss, s, a, delta):
    # A stale z_hat whose candidate also sat below delta would otherwise linger.
    z = z_hat[s, a]
    if z >= 0 and cell_likelihood(weights, totals, s, a, z) > delta:
        return
    total = totals[s, a]
    if total <= 0.0:
        return
    best = -1
    for x in range(weights.shape[2]):
        if weights[s, a, x] / total > delta and (best < 0 or q_ss[s, x] > q_ss[s, best]):
            best = x
    if best >= 0:
        z_hat[s, a] = best


@numba.njit(cache=True)
def _bootstrap(weights, totals, z_hat, q_ss, terminal, s, delta):
    if terminal[s]:
        return 0.0
    found = False
    best = 0.0
    for a in range(z_hat.shape[1]):
        z = z_hat[s, a]
        if z < 0 or cell_likelihood(weights, totals, s, a, z) <= delta:
            continue
        v = q_ss[s, z]
        if not found or v > best:
            best = v
            found = True
    return best


@numba.njit(cache=True)
def _iqss_td(weights, totals, z_hat, q_ss, terminal, s, s_next, r, alpha, gamma, delta):
    target = r + gamma * _bootstrap(weights, totals, z_hat, q_ss, terminal, s_next, delta)
    q_ss[s, s_next] = (1.0 - alpha) * q_ss[s, s_next] + alpha * target


@numba.njit(cache=True)
def _induce_state(z_hat, q_ss, q_ssa, s):
    for a in range(z_hat.shape[1]):
        z = z_hat[s, a]
        if z >= 0:
            q_ssa[s, a] = q_ss[s, z]


@numba.njit(cache=True)
def _iqss_sample(weights, totals, increments, z_hat, q_ss, q_ssa, terminal, s, a, s_next, r, alpha, gamma, delta, decay):
    observe_cell(weights, totals, increments, s, a, s_next, decay)
    _update_zhat(weights, totals, z_hat, q_ss, s, a, s_next, delta)
    _repair_zhat(weights, totals, z_hat, q_ss, s, a, delta)
    _iqss_td(weights, totals, z_hat, q_ss, terminal, s, s_next, r, alpha, gamma, delta)
    _induce_state(z_hat, q_ss, q_ssa, s)


@numba.njit(cache=True)
def _iqss_batch(weights, totals, increments, z_hat, q_ss, q_ssa, terminal, transitions, rewards, idx, alpha, gamma, delta, decay):
    n_states, n_actions = weights.shape[2], z_hat.shape[1]
    for i in idx:
        s, a, s_next, r = transitions[i, 0], transitions[i, 1], transitions[i, 2], rewards[i]
        # observe
        if totals[s, a] > 0.0:
            increments[s, a] /= decay
        inc = increments[s, a]
        weights[s, a, s_next] += inc
        totals[s, a] += inc
        if inc > RESCALE_AT:
            total = 0.0
            for x in range(n_states):
                weights[s, a, x] /= inc
                total += weights[s, a, x]
            totals[s, a] = total
            increments[s, a] = 1.0
        total = totals[s, a]
        # z_hat three-case rule, then repair
        z = z_hat[s, a]
        z_live = z >= 0 and weights[s, a, z] / total > delta
        if weights[s, a, s_next] / total > delta:
            if not z_live or q_ss[s, z] < q_ss[s, s_next]:
                z_hat[s, a] = s_next
                z_live = True
        if not z_live:
            best = -1
            for x in range(n_states):
                if weights[s, a, x] / total > delta and (best < 0 or q_ss[s, x] > q_ss[s, best]):
                    best = x
            if best >= 0:
                z_hat[s, a] = best
        # TD step toward the best live neighbor value of s_next
        boot = 0.0
        if not terminal[s_next]:
            found = False
            for b in range(n_actions):
                zb = z_hat[s_next, b]
                tb = totals[s_next, b]
                if zb < 0 or tb <= 0.0 or weights[s_next, b, zb] / tb <= delta:
                    continue
                if not found or q_ss[s_next, zb] > boot:
                    boot = q_ss[s_next, zb]
                    found = True
        q_ss[s, s_next] = (1.0 - alpha) * q_ss[s, s_next] + alpha * (r + gamma * boot)
        # induce Q(s, .)
        for b in range(n_actions):
            zb = z_hat[s, b]
            if zb >= 0:
                q_ssa[s, b] = q_ss[s, zb]


@numba.njit(cache=True)
def _indq_sample(q, terminal, s, a, s_next, r, alpha, gamma):
    boot = 0.0
    if not terminal[s_next]:
        boot = q[s_next, 0]
        for b in range(1, q.shape[1]):
            if q[s_next, b] > boot:
                boot = q[s_next, b]
    q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (r + gamma * boot)


@numba.njit(cache=True)
def _indq_batch(q, visited, terminal, transitions, rewards, idx, alpha, gamma):
    for i in idx:
        s = transitions[i, 0]
        _indq_sample(q, terminal, s, transitions[i, 1], transitions[i, 2], rewards[i], alpha, gamma)
        visited[s] = True


# -- decentralized learners ---------------------------------------------------------------


def _first_argmax(values: Sequence[float], order: Sequence[int]) -> int:
    best = order[0]
    best_value = values[best]
    for a in order[1:]:
        if values[a] > best_value:
            best, best_value = a, values[a]
    return best


class _IndependentLearner:
    """Shared plumbing for the decentralized learners."""

    def __init__(
        self,
        agent_id: int,
        num_states: int,
        num_actions: int,
        params: Hyperparams | None = None,
        terminal_states: Iterable[int] = (),
        action_order: Sequence[int] | None = None,
    ):
        self.agent_id = agent_id
        self.num_states = num_states
        self.num_actions = num_actions
        self.params = params or Hyperparams()
        self.terminal = np.zeros(num_states, dtype=np.bool_)
        self.terminal[list(terminal_states)] = True
        # Tie-break order among equally valued actions: first listed wins.
        if action_order is None:
            action_order = range(num_actions)
        self.action_order = tuple(int(a) for a in action_order)
        if sorted(self.action_order) != list(range(num_actions)):
            raise ValueError(f"action_order {self.action_order} is not a permutation of {num_actions} actions")
        self.buffer = ExperienceBuffer(self.params.buffer_size)

    def record(self, e: Experience) -> None:
        self.buffer.append(e)

    def learn(self, rng: np.random.Generator) -> None:
        """One mini-batch of replayed updates; a no-op while the buffer is empty."""
        if self.buffer.size:
            self._learn_batch(self.buffer.sample(rng, self.params.batch_size))

    def _learn_batch(self, idx: np.ndarray) -> None:
        raise NotImplementedError

    def action_values(self, s: int) -> list[float]:
        raise NotImplementedError

    def greedy_action(self, s: int) -> int:
        return _first_argmax(self.action_values(s), self.action_order)

    def select_action(self, s: int, role: str, rng: np.random.Generator) -> int:
        """epsilon-greedy when exploring; deterministic argmax when greedy."""
        if role == EXPLORE and rng.random() < self.params.epsilon:
            return int(rng.integers(self.num_actions))
        return self.greedy_action(s)

    def known_states(self) -> list[int]:
        raise NotImplementedError

    def policy(self) -> dict[int, int]:
        return {s: self.greedy_action(s) for s in self.known_states()}

    def dump_policy(self, out: TextIO) -> None:
        out.write("state action\n")
        for s, a in self.policy().items():
            out.write(f"{s} {a}\n")


class IqssLearner(_IndependentLearner):
    """Independent QSS learner with best-neighbor tracking.

    Learns Q_k(s, s') from its own experience, tracks for every (s, a_k) the
    best-valued next state ``z_hat`` among those still reachable with likelihood
    above delta, and acts greedily on the induced Q_k(s, a_k) = Q_k(s, z_hat).
    """

    def __init__(self, agent_id, num_states, num_actions, params=None, terminal_states=(), action_order=None):
        super().__init__(agent_id, num_states, num_actions, params, terminal_states, action_order)
        self.model = TransitionModel(num_states, num_actions, self.params.delta, self.params.decay)
        self.q_ss = np.zeros((num_states, num_states))
        self.z_hat = np.full((num_states, num_actions), NO_STATE, dtype=np.int64)
        self.q_ssa = np.zeros((num_states, num_actions))

    def update_zhat(self, s: int, a_k: int, s_cand: int) -> None:
        """Three-case replacement rule for the best neighbor of (s, a_k)."""
        m = self.model
        _update_zhat(m.weights, m.totals, self.z_hat, self.q_ss, s, a_k, s_cand, self.params.delta)

    def bootstrap(self, s: int) -> float:
        """max over own actions of Q_k(s, z_hat[s, a]); absent or sub-delta z_hat cells are skipped."""
        m = self.model
        return float(_bootstrap(m.weights, m.totals, self.z_hat, self.q_ss, self.terminal, s, self.params.delta))

    def td_update(self, e: Experience) -> None:
        m, p = self.model, self.params
        _iqss_td(m.weights, m.totals, self.z_hat, self.q_ss, self.terminal, e.s, e.s_next, e.r, p.alpha, p.gamma, p.delta)

    def induce(self, states: Iterable[int] | None = None) -> None:
        """Refresh Q_k(s, a_k) = Q_k(s, z_hat) for the given states (all when None)."""
        for s in range(self.num_states) if states is None else states:
            _induce_state(self.z_hat, self.q_ss, self.q_ssa, s)

    def update(self, e: Experience) -> None:
        """observe -> z_hat rule -> TD step -> induction, for one replayed sample."""
        m, p = self.model, self.params
        _iqss_batch(
            m.weights, m.totals, m.increments, self.z_hat, self.q_ss, self.q_ssa, self.terminal,
            np.array([[e.s, e.a_k, e.s_next]], dtype=np.int64), np.array([e.r]), np.zeros(1, dtype=np.int64),
            p.alpha, p.gamma, p.delta, p.decay,
        )

    def _learn_batch(self, idx: np.ndarray) -> None:
        m, p, b = self.model, self.params, self.buffer
        _iqss_batch(
            m.weights, m.totals, m.increments, self.z_hat, self.q_ss, self.q_ssa, self.terminal,
            b.transitions, b.rewards, idx, p.alpha, p.gamma, p.delta, p.decay,
        )

    def action_values(self, s: int) -> list[float]:
        return self.q_ssa[s].tolist()

    def known_states(self) -> list[int]:
        return [int(s) for s in np.flatnonzero((self.z_hat >= 0).any(axis=1))]

    def zhat_invariant_violations(self) -> list[tuple[int, int]]:
        """Cells whose z_hat sits at or below delta although some next state is above it."""
        bad = []
        for s, a in self.model.cells():
            z = int(self.z_hat[s, a])
            live = self.model.neighbors_delta(s, a)
            if live and (z < 0 or self.model.likelihood(s, a, z) <= self.params.delta):
                bad.append((s, a))
        return bad

    def dump_tables(self, out: TextIO) -> None:
        out.write("# q_ss: s s_next value\n")
        for s, nxt in np.argwhere(self.q_ss != 0.0):
            out.write(f"{s} {nxt} {float(self.q_ss[s, nxt])!r}\n")
        out.write("# z_hat / q_ssa: s a_k z_hat value\n")
        for s, a in np.argwhere(self.z_hat >= 0):
            out.write(f"{s} {a} {int(self.z_hat[s, a])} {float(self.q_ssa[s, a])!r}\n")


class IndqLearner(_IndependentLearner):
    """Independent Q-learning over (state, own action)."""

    def __init__(self, agent_id, num_states, num_actions, params=None, terminal_states=(), action_order=None):
        super().__init__(agent_id, num_states, num_actions, params, terminal_states, action_order)
        self.q = np.zeros((num_states, num_actions))
        self._visited = np.zeros(num_states, dtype=np.bool_)

    def td_update(self, e: Experience) -> None:
        p = self.params
        _indq_sample(self.q, self.terminal, e.s, e.a_k, e.s_next, e.r, p.alpha, p.gamma)
        self._visited[e.s] = True

    update = td_update

    def _learn_batch(self, idx: np.ndarray) -> None:
        p, b = self.params, self.buffer
        _indq_batch(self.q, self._visited, self.terminal, b.transitions, b.rewards, idx, p.alpha, p.gamma)

    def action_values(self, s: int) -> list[float]:
        return self.q[s].tolist()

    def known_states(self) -> list[int]:
        return [int(s) for s in np.flatnonzero(self._visited)]

    def dump_tables(self, out: TextIO) -> None:
        out.write("# q: s a_k value\n")
        for s in self.known_states():
            for a in range(self.num_actions):
                out.write(f"{s} {a} {float(self.q[s, a])!r}\n")


# -- centralized baselines --------------------------------------------------------------

CENQ = "cenq"
CQSS = "cqss"


class CentralLearner:
    """Centralized baseline with access to joint actions (cenQ) or global state pairs (cQSS)."""

    def __init__(
        self,
        mode: str,
        num_actions: Sequence[int],
        params: Hyperparams | None = None,
        terminal_states: Iterable[int] = (),
    ):
        if mode not in (CENQ, CQSS):
            raise ValueError(f"unknown centralized mode {mode!r}")
        self.mode = mode
        self.num_actions = tuple(num_actions)
        self.params = params or Hyperparams()
        self.terminal_states = frozenset(terminal_states)
        self.joint_actions = list(itertools.product(*(range(n) for n in self.num_actions)))
        self._index = {a: i for i, a in enumerate(self.joint_actions)}
        self.buffer = ReplayBuffer(self.params.buffer_size)
        self.q_joint: dict[int, list[float]] = {}  # cenQ: s -> value per joint action
        self.q_pairs: dict[tuple[int, int], float] = {}  # cQSS: (s, s') -> value
        self.neighbors: dict[int, set[int]] = {}  # cQSS: observed N(s)
        self.successor: dict[tuple[int, int], int] = {}  # cQSS: observed T(s, a)

    def record(self, tr: Transition) -> None:
        self.buffer.append(tr)

    def learn(self, rng: np.random.Generator) -> None:
        if not len(self.buffer):
            return
        for tr in self.buffer.sample(rng, self.params.batch_size):
            self.td_update(tr.s, tr.a, tr.r, tr.s_next)

    def td_update(self, s: int, a: Sequence[int] | None, r: float, s_next: int) -> None:
        """TD step toward r + gamma * max over joint actions (cenQ) or over N(s') (cQSS).

        cQSS ignores the joint action for the value itself; when given it is only
        used to remember T(s, a) for policy induction.
        """
        p = self.params
        terminal = s_next in self.terminal_states
        if self.mode == CENQ:
            nxt = self.q_joint.get(s_next)
            boot = 0.0 if terminal or nxt is None else max(nxt)
            row = self.q_joint.setdefault(s, [0.0] * len(self.joint_actions))
            i = self._index[tuple(a)]
            row[i] = (1.0 - p.alpha) * row[i] + p.alpha * (r + p.gamma * boot)
            return
        self.neighbors.setdefault(s, set()).add(s_next)
        if a is not None:
            self.successor[(s, self._index[tuple(a)])] = s_next
        boot = 0.0
        if not terminal:
            succ = self.neighbors.get(s_next)
            if succ:
                boot = max(self.q_pairs.get((s_next, x), 0.0) for x in succ)
        key = (s, s_next)
        self.q_pairs[key] = (1.0 - p.alpha) * self.q_pairs.get(key, 0.0) + p.alpha * (r + p.gamma * boot)

    def joint_values(self, s: int) -> list[float]:
        if self.mode == CENQ:
            return list(self.q_joint.get(s, [0.0] * len(self.joint_actions)))
        values = []
        for i in range(len(self.joint_actions)):
            nxt = self.successor.get((s, i))
            values.append(0.0 if nxt is None else self.q_pairs.get((s, nxt), 0.0))
        return values

    def greedy_joint(self, s: int) -> tuple[int, ...]:
        values = self.joint_values(s)
        return self.joint_actions[_first_argmax(values, range(len(values)))]

    def agent_view(self, k: int) -> "CentralAgentView":
        return CentralAgentView(self, k)


class CentralAgentView:
    """Agent ``k``'s executor of the central controller's joint greedy action."""

    def __init__(self, central: CentralLearner, k: int):
        self.central = central
        self.agent_id = k
        self.num_actions = central.num_actions[k]

    def greedy_action(self, s: int) -> int:
        return self.central.greedy_joint(s)[self.agent_id]

    def select_action(self, s: int, role: str, rng: np.random.Generator) -> int:
        if role == EXPLORE and rng.random() < self.central.params.epsilon:
            return int(rng.integers(self.num_actions))
        return self.greedy_action(s)


def select_action(learner, s: int, role: str, rng: np.random.Generator) -> int:
    """epsilon-greedy when ``role`` is explore, deterministic argmax when greedy."""
    return learner.select_action(s, role, rng)
