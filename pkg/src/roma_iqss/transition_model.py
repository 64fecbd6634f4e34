"""Per-agent decayed-count estimate of P(s' | s, a_k) and its delta-neighbor sets."""
from __future__ import annotations

from typing import Iterator, TextIO

import numba
import numpy as np

DEFAULT_DELTA = 0.01
DEFAULT_DECAY = 0.999


RESCALE_AT = 1e150


@numba.njit(cache=True)
def observe_cell(weights, totals, increments, s, a, s_next, decay):
    # Decaying every weight by `decay` is the same, up to a common factor, as
    # growing the next increment by 1 / decay; likelihoods are ratios, so only
    # the stored scale changes. The row is renormalized before it can overflow.
    if totals[s, a] > 0.0:
        increments[s, a] /= decay
    weights[s, a, s_next] += increments[s, a]
    totals[s, a] += increments[s, a]
    if increments[s, a] > RESCALE_AT:
        row = weights[s, a]
        inc = increments[s, a]
        total = 0.0
        for i in range(row.shape[0]):
            row[i] /= inc
            total += row[i]
        totals[s, a] = total
        increments[s, a] = 1.0


@numba.njit(cache=True)
def cell_likelihood(weights, totals, s, a, s_next):
    total = totals[s, a]
    if total <= 0.0:
        return 0.0
    return weights[s, a, s_next] / total


class TransitionModel:
    """Maximum-likelihood transition counts for one agent's own action.

    Every observation of ``(s, a_k)`` first multiplies all weights in that cell by
    ``decay`` and then adds 1 to the observed next state, so transitions that
    other agents stopped producing fade out geometrically. Only the observed cell
    decays; unrelated cells keep their weights.

    Internally the weights of a cell are stored multiplied by ``increments[s, a]``
    (the amount the most recent observation added), which keeps an observation O(1).
    """

    def __init__(
        self,
        num_states: int,
        num_actions: int,
        delta: float = DEFAULT_DELTA,
        decay: float = DEFAULT_DECAY,
    ):
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        if not 0.0 < decay <= 1.0:
            raise ValueError(f"decay must lie in (0, 1], got {decay}")
        self.num_states = num_states
        self.num_actions = num_actions
        self.delta = delta
        self.decay = decay
        self.weights = np.zeros((num_states, num_actions, num_states))
        self.totals = np.zeros((num_states, num_actions))
        self.increments = np.ones((num_states, num_actions))

    def observe(self, s: int, a_k: int, s_next: int) -> None:
        observe_cell(self.weights, self.totals, self.increments, s, a_k, s_next, self.decay)

    def likelihood(self, s: int, a_k: int, s_next: int) -> float:
        return float(cell_likelihood(self.weights, self.totals, s, a_k, s_next))

    def weight(self, s: int, a_k: int, s_next: int) -> float:
        """Decayed count of ``s_next`` in cell (s, a_k); the latest observation counts 1."""
        return float(self.weights[s, a_k, s_next] / self.increments[s, a_k])

    def distribution(self, s: int, a_k: int) -> dict[int, float]:
        total = self.totals[s, a_k]
        if total <= 0.0:
            return {}
        row = self.weights[s, a_k]
        return {int(x): float(row[x] / total) for x in np.flatnonzero(row)}

    def neighbors_delta(self, s: int, a_k: int) -> set[int]:
        """Next states whose likelihood exceeds ``delta``; empty for an unseen cell."""
        total = self.totals[s, a_k]
        if total <= 0.0:
            return set()
        return {int(x) for x in np.flatnonzero(self.weights[s, a_k] / total > self.delta)}

    def cells(self) -> Iterator[tuple[int, int]]:
        for s, a in np.argwhere(self.totals > 0.0):
            yield int(s), int(a)

    def dump(self, out: TextIO) -> None:
        """Write ``s a_k s' weight likelihood`` rows, sorted, one per line."""
        out.write("s a_k s_next weight likelihood\n")
        for s, a in self.cells():
            total = self.totals[s, a]
            row = self.weights[s, a]
            for nxt in np.flatnonzero(row):
                weight = float(row[nxt] / self.increments[s, a])
                out.write(f"{s} {a} {nxt} {weight!r} {float(row[nxt] / total)!r}\n")
