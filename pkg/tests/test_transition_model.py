import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roma_iqss.envs import L, build_two_optima_matrix_game
from roma_iqss.transition_model import TransitionModel

LL, LR = 1, 2


def test_single_observation_has_likelihood_one():
    m = TransitionModel(4, 2)
    m.observe(0, 1, 3)
    assert m.likelihood(0, 1, 3) == 1.0


def test_no_decay_gives_equal_split():
    m = TransitionModel(4, 2, decay=1.0)
    m.observe(0, 0, 1)
    m.observe(0, 0, 2)
    assert m.likelihood(0, 0, 1) == 0.5


def test_half_decay_weights():
    m = TransitionModel(4, 2, decay=0.5)
    m.observe(0, 0, 1)
    m.observe(0, 0, 2)
    assert m.weight(0, 0, 1) == 0.5
    assert m.weight(0, 0, 2) == 1.0
    assert m.likelihood(0, 0, 2) == pytest.approx(2 / 3, abs=1e-15)


def test_unseen_cell():
    m = TransitionModel(4, 2)
    assert m.likelihood(1, 1, 0) == 0.0
    assert m.neighbors_delta(1, 1) == set()
    assert m.distribution(1, 1) == {}


def test_decay_is_per_cell():
    m = TransitionModel(4, 2, decay=0.5)
    m.observe(0, 0, 1)
    for _ in range(10):
        m.observe(2, 1, 3)
    assert m.weight(0, 0, 1) == 1.0


def _explore_uniform(model, game, rng, steps):
    for _ in range(steps):
        a = (L, int(rng.integers(2)))
        model.observe(0, L, int(game.transition[(0, *a)]))


def test_uniform_partner_gives_half_likelihood():
    game = build_two_optima_matrix_game()
    m = TransitionModel(game.num_states, 2)
    _explore_uniform(m, game, np.random.default_rng(0), 1000)
    assert m.likelihood(0, L, LL) == pytest.approx(0.5, abs=0.05)
    assert m.neighbors_delta(0, L) == {LL, LR}


def _steps_until_drop(w_stale, total, decay, delta):
    # after n observations of the fresh state: stale weight w*decay^n,
    # total T*decay^n + (1 - decay^n) / (1 - decay)
    n = 0
    while True:
        n += 1
        kept = decay**n
        if w_stale * kept / (total * kept + (1 - kept) / (1 - decay)) <= delta:
            return n


def test_stale_transition_drops_out_at_predicted_step():
    game = build_two_optima_matrix_game()
    m = TransitionModel(game.num_states, 2, delta=0.01, decay=0.999)
    rng = np.random.default_rng(1)
    _explore_uniform(m, game, rng, 2000)
    w_stale = m.weight(0, L, LR)
    total = m.totals[0, L] / m.increments[0, L]
    n_drop = _steps_until_drop(w_stale, total, 0.999, 0.01)
    assert n_drop <= 5000
    for n in range(1, 5001):
        m.observe(0, L, LL)  # partner froze to greedy L
        assert (LR in m.neighbors_delta(0, L)) == (n < n_drop), n
    assert m.neighbors_delta(0, L) == {LL}


def test_predicted_drop_matches_logarithm_bound():
    # with the cell saturated (total ~ 1 / (1 - decay)) the stale share shrinks as decay^n
    decay, delta, share = 0.999, 0.01, 0.5
    total = 1 / (1 - decay)
    n = _steps_until_drop(share * total, total, decay, delta)
    assert n == math.ceil(math.log(delta / share) / math.log(decay))


def test_dump_format():
    m = TransitionModel(3, 1, decay=0.5)
    m.observe(0, 0, 1)
    m.observe(0, 0, 2)
    out = io.StringIO()
    m.dump(out)
    assert out.getvalue().splitlines() == [
        "s a_k s_next weight likelihood",
        "0 0 1 0.5 0.3333333333333333",
        "0 0 2 1.0 0.6666666666666666",
    ]


def test_invalid_parameters():
    with pytest.raises(ValueError):
        TransitionModel(2, 2, delta=0.0)
    with pytest.raises(ValueError):
        TransitionModel(2, 2, decay=1.5)


def test_long_runs_rescale_without_changing_likelihoods():
    m = TransitionModel(3, 1, decay=0.5)
    for i in range(2000):
        m.observe(0, 0, i % 3)
    assert np.isfinite(m.totals).all()
    # weights 1, 1/2, 1/4 repeating: latest state 1 holds 4/7
    assert m.likelihood(0, 0, 1) == pytest.approx(4 / 7, rel=1e-12)
    assert m.weight(0, 0, 1) == pytest.approx(1 / (1 - 0.125), rel=1e-12)


observations = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 1), st.integers(0, 3)), min_size=1, max_size=200
)


@settings(max_examples=60, deadline=None)
@given(observations, st.floats(0.3, 1.0))
def test_likelihoods_normalize(obs, decay):
    m = TransitionModel(4, 2, decay=decay)
    for s, a, nxt in obs:
        m.observe(s, a, nxt)
    for s, a in m.cells():
        dist = m.distribution(s, a)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)
        assert m.totals[s, a] == pytest.approx(m.weights[s, a].sum(), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(observations)
def test_neighbors_only_contain_observed_states(obs):
    m = TransitionModel(4, 2)
    seen = {}
    for s, a, nxt in obs:
        m.observe(s, a, nxt)
        seen.setdefault((s, a), set()).add(nxt)
    for s, a in m.cells():
        assert m.neighbors_delta(s, a) <= seen[(s, a)]
