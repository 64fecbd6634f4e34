"""Compiled interaction loop for the decentralized learners.

The loop consumes pre-drawn uniforms and pre-computed schedule masks, so a
segment of steps runs without returning to Python. It mutates the learners'
own arrays in place through the same per-sample rules the learner methods use.
"""
from __future__ import annotations

import numba
import numpy as np

from .learners import _indq_batch, _iqss_batch, buffer_append

IQSS, INDQ = 0, 1


@numba.njit(cache=True, inline="always")
def _greedy(values, order):
    best = order[0]
    for a in order[1:]:
        if values[a] > values[best]:
            best = a
    return best


@numba.njit(cache=True)
def run_segment(
    kind, flat, strides, reward, terminal, horizon, initial_state, cursor,
    explore, record, learn, act_u, learn_u, eps, orders, num_actions,
    weights, totals, increments, z_hat, q_ss, values, visited,
    buf_transitions, buf_rewards, buf_meta, capacity,
    alpha, gamma, delta, decay,
    log_s, log_a, log_next,
):
    """Run ``len(explore)`` steps; ``cursor`` = [state, steps into episode] is updated in place.

    ``values`` is Q(s, a_k) for indQ and the induced table for iQSS. Uniform draws:
    ``act_u[k, i]`` = (explore?, which action), ``learn_u[k, i]`` = one per replayed sample.
    """
    k_agents = num_actions.shape[0]
    batch = learn_u.shape[2]
    s, ep_len = cursor[0], cursor[1]
    a = np.empty(k_agents, dtype=np.int64)
    idx = np.empty(batch, dtype=np.int64)
    for i in range(explore.shape[0]):
        j = 0
        for k in range(k_agents):
            if explore[i, k] and act_u[k, i, 0] < eps:
                a[k] = min(int(act_u[k, i, 1] * num_actions[k]), num_actions[k] - 1)
            else:
                a[k] = _greedy(values[k][s], orders[k])
            j += a[k] * strides[k]
        s_next = flat[s, j]
        r = reward[s, s_next]
        log_s[i] = s
        log_next[i] = s_next
        for k in range(k_agents):
            log_a[i, k] = a[k]
            if record[i, k]:
                buffer_append(buf_transitions[k], buf_rewards[k], buf_meta[k], capacity, s, a[k], s_next, r)
        for k in range(k_agents):
            size = buf_meta[k][0]
            if not learn[i, k] or size == 0:
                continue
            for b in range(batch):
                idx[b] = min(int(learn_u[k, i, b] * size), size - 1)
            if kind == IQSS:
                _iqss_batch(
                    weights[k], totals[k], increments[k], z_hat[k], q_ss[k], values[k], terminal,
                    buf_transitions[k], buf_rewards[k], idx, alpha, gamma, delta, decay,
                )
            else:
                _indq_batch(values[k], visited[k], terminal, buf_transitions[k], buf_rewards[k], idx, alpha, gamma)
        ep_len += 1
        if terminal[s_next] or ep_len >= horizon:
            s, ep_len = initial_state, 0
        else:
            s = s_next
    cursor[0], cursor[1] = s, ep_len
