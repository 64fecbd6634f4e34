import random

import numpy as np
import pytest

from roma_iqss.envs import L, R, build_random_game, build_single_agent_chain, build_two_optima_matrix_game
from roma_iqss.game import (
    InvalidInputError,
    TabularGame,
    dumps_game,
    load_game,
    loads_game,
    run_episode,
    save_game,
    step,
)


@pytest.fixture
def two_optima():
    return build_two_optima_matrix_game()


def test_step_aligned_pair_pays_success(two_optima):
    assert step(two_optima, 0, (L, L)) == (1, 100.0)


def test_step_divergent_pair_pays_fine(two_optima):
    assert step(two_optima, 0, (L, R)) == (2, -200.0)


def test_step_self_loop_is_identity(two_optima):
    assert step(two_optima, 4, (R, L)) == (4, 0.0)


def test_step_rejects_bad_state_and_action(two_optima):
    with pytest.raises(InvalidInputError):
        step(two_optima, 7, (L, L))
    with pytest.raises(InvalidInputError, match="agent 1"):
        step(two_optima, 0, (L, 2))
    with pytest.raises(InvalidInputError):
        step(two_optima, 0, (L,))


def test_step_is_deterministic(two_optima):
    assert {step(two_optima, 0, (R, R)) for _ in range(20)} == {(4, 100.0)}


def test_totality_fuzz_never_errors():
    game = build_random_game(3, 12, (2, 3, 2), rng_seed=5)
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        s = int(rng.integers(game.num_states))
        a = tuple(int(rng.integers(n)) for n in game.num_actions)
        s_next, r = step(game, s, a)
        assert 0 <= s_next < game.num_states and np.isfinite(r)


def test_run_episode_optimal_policy_returns_100(two_optima):
    trajectory, total = run_episode(two_optima, [lambda s, rng: L, lambda s, rng: L], rng_seed=0)
    assert total == 100.0
    assert [tr.s_next for tr in trajectory] == [1]


def test_run_episode_zero_reward_self_loop():
    chain = build_single_agent_chain(4)
    _, total = run_episode(chain, [lambda s, rng: 1], rng_seed=0)
    assert total == 0.0


def test_run_episode_length_bounded_by_horizon():
    for seed in range(20):
        game = build_random_game(2, 8, 2, rng_seed=seed, horizon=6)
        policies = [lambda s, rng: rng.randrange(2)] * 2
        trajectory, _ = run_episode(game, policies, rng_seed=seed)
        assert len(trajectory) <= game.horizon


def test_run_episode_same_seed_same_trajectory():
    game = build_random_game(2, 10, 3, rng_seed=1)
    policies = [lambda s, rng: rng.randrange(3)] * 2
    assert run_episode(game, policies, rng_seed=9) == run_episode(game, policies, rng_seed=9)


def test_policies_receive_random_instance(two_optima):
    seen = []

    def policy(s, rng):
        seen.append(type(rng))
        return L

    run_episode(two_optima, [policy, policy], rng_seed=0)
    assert seen and all(t is random.Random for t in seen)


def test_game_file_round_trip(tmp_path):
    game = build_random_game(2, 6, (2, 3), rng_seed=3, horizon=4)
    path = tmp_path / "g.txt"
    save_game(game, path)
    back = load_game(path)
    assert np.array_equal(back.transition, game.transition)
    assert np.array_equal(np.isnan(back.reward), np.isnan(game.reward))
    assert np.array_equal(np.nan_to_num(back.reward), np.nan_to_num(game.reward))
    assert (back.initial_state, back.horizon, back.terminal_states) == (
        game.initial_state,
        game.horizon,
        game.terminal_states,
    )
    assert dumps_game(back) == dumps_game(game)


def test_game_file_missing_transition_is_rejected():
    text = "num_agents 1\nnum_states 2\nactions 2\ninitial 0\nhorizon 1\n0 0 1 1.0\n1 0 1 0\n1 1 1 0\n"
    with pytest.raises(InvalidInputError, match=r"\(0, 1\)"):
        loads_game(text)


def test_game_file_conflicting_reward_is_rejected():
    text = (
        "num_agents 1\nnum_states 2\nactions 2\ninitial 0\nhorizon 1\n"
        "0 0 1 1.0\n0 1 1 2.0\n1 0 1 0\n1 1 1 0\n"
    )
    with pytest.raises(InvalidInputError):
        loads_game(text)


def test_game_construction_checks_targets():
    with pytest.raises(InvalidInputError):
        TabularGame(
            num_agents=1,
            num_states=2,
            num_actions=(1,),
            transition=np.array([[5], [1]]),
            reward=np.zeros((2, 2)),
            initial_state=0,
            horizon=1,
        )
