import inspect

import numpy as np
import pytest

from roma_iqss.cli import main
from roma_iqss.envs import StagedGameSpec, build_random_game, build_staged_game, build_two_optima_matrix_game
from roma_iqss.game import Experience, save_game
from roma_iqss.harness import (
    ConfigError,
    ExperimentConfig,
    SchemaError,
    World,
    evaluate_greedy,
    parse_config,
    read_metrics,
    run_experiment,
    run_single,
    summarize,
)
from roma_iqss.learners import Hyperparams, IndqLearner, IqssLearner
from roma_iqss.oracle import enumerate_optimal_joint_policies, joint_value_iteration
from roma_iqss.schedulers import Mode

ROMA_TEXT = """
game = two_optima
method = ROMA-iqss
t_max = 4000
t_u = 500
delta = 0.01
num_runs = 2
"""


def test_parse_config():
    cfg = parse_config(ROMA_TEXT + "game.reward_success = 50  # comment\n")
    assert cfg.method == "ROMA-iqss"
    assert (cfg.t_max, cfg.t_u, cfg.params.delta) == (4000, 500, 0.01)
    assert cfg.game_params == {"reward_success": "50"}
    cfg.validate()


def test_parse_config_lists_every_problem():
    with pytest.raises(ConfigError) as err:
        parse_config("t_max = many\nbogus = 1\nalpha = 3\nno equals sign\n")
    text = " ".join(err.value.problems)
    for word in ("t_max", "bogus", "alpha", "line 4"):
        assert word in text


def test_centralized_learner_under_roma_is_rejected():
    cfg = ExperimentConfig(interaction=Mode.ROMA, learner="cenq", t_u=10)
    with pytest.raises(ConfigError, match="centralized"):
        cfg.validate()


def test_roma_without_turn_length_is_rejected():
    with pytest.raises(ConfigError, match="t_u"):
        ExperimentConfig(interaction=Mode.ROMA).validate()


def test_zero_budget_writes_header_only(tmp_path):
    cfg = ExperimentConfig(t_max=0, num_runs=2)
    path = run_experiment(cfg, tmp_path)
    assert path.read_text() == "run,seed,t,eval_return,reached_optimum,aligned\n"


@pytest.mark.parametrize("method", ["ROMA-iqss", "SMA-indq", "SMA-cqss", "ROMA_ESPC-iqss"])
def test_reruns_are_byte_identical(tmp_path, method):
    interaction, learner = method.rsplit("-", 1)
    cfg = ExperimentConfig(
        game="staged", interaction=Mode(interaction), learner=learner,
        t_max=1500, t_u=100, n_rounds=5, num_runs=2, base_seed=7,
    )
    first = run_experiment(cfg, tmp_path / "a").read_bytes()
    second = run_experiment(cfg, tmp_path / "b").read_bytes()
    assert first == second
    assert len(first.splitlines()) == 1 + 2 * 100


def test_eval_interval_does_not_change_learning():
    cfg = ExperimentConfig(game="staged", interaction=Mode.ROMA, t_u=300, t_max=3000, eval_every=1000)
    dense = ExperimentConfig(**{**cfg.__dict__, "eval_every": 7})
    rows_a, world_a = run_single(cfg, 0)
    rows_b, world_b = run_single(dense, 0)
    assert rows_a[-1] == rows_b[-1]
    for a, b in zip(world_a.agents, world_b.agents):
        assert np.array_equal(a.q_ss, b.q_ss)


def test_compiled_step_matches_learner_update():
    # a one-step budget run must equal a hand-applied record + learn on the same draws
    cfg = ExperimentConfig(game="staged", t_max=1, params=Hyperparams(batch_size=1))
    trace = []
    _, world = run_single(cfg, 0, trace=lambda t, d, s, a, nxt: trace.append((s, a, nxt)))
    (s, a, nxt), = trace
    game = world.game
    for k, agent in enumerate(world.agents):
        ref = IqssLearner(k, game.num_states, game.num_actions[k], cfg.params, game.terminal_states)
        ref.update(Experience(s, a[k], nxt, float(game.reward[s, nxt])))
        assert np.array_equal(ref.q_ss, agent.q_ss)
        assert np.array_equal(ref.z_hat, agent.z_hat)


@pytest.mark.parametrize("mode", [Mode.SMA, Mode.ROMA, Mode.ROMA_ESPC])
def test_buffers_hold_only_own_actions(mode):
    """Decentralization audit: each learner stores (s, own action, s', r) for the steps it recorded."""
    cfg = ExperimentConfig(game="staged", interaction=mode, t_u=50, n_rounds=2, t_max=600)
    trace = []
    _, world = run_single(cfg, 0, trace=lambda t, d, s, a, nxt: trace.append((d, s, a, nxt)))
    game = world.game
    for k, agent in enumerate(world.agents):
        expected = [
            (s, a[k], nxt, float(game.reward[s, nxt])) for d, s, a, nxt in trace if k in d.recording_agents
        ]
        assert [tuple(e) for e in agent.buffer] == expected
    for cls in (IqssLearner, IndqLearner):
        assert list(inspect.signature(cls.record).parameters) == ["self", "e"]
        assert list(inspect.signature(cls.learn).parameters) == ["self", "rng"]


def test_one_recorder_per_step_under_roma():
    cfg = ExperimentConfig(game="staged", interaction=Mode.ROMA, t_u=37, t_max=1000)
    recorders = []
    run_single(cfg, 3, trace=lambda t, d, s, a, nxt: recorders.append(len(d.recording_agents)))
    assert recorders == [1] * 1000


def test_trace_file_lines(tmp_path):
    cfg = ExperimentConfig(interaction=Mode.ROMA, t_u=2, t_max=4, num_runs=1, trace=True)
    run_experiment(cfg, tmp_path)
    lines = (tmp_path / "runs" / "trace_000.txt").read_text().splitlines()
    assert len(lines) == 4
    assert lines[2].startswith("3 ge rec=1 learn=0,1 s=0 a=")


def test_evaluate_greedy_examples():
    game = build_two_optima_matrix_game()
    world = World(ExperimentConfig(tie_break="index"), game, 0)
    ret, _ = evaluate_greedy(world, 3)
    assert ret == 100.0  # untrained agents all play action 0 = (L, L)
    world.agents[1].q_ssa[0] = (0.0, 1.0)
    assert evaluate_greedy(world, 1)[0] == -200.0
    staged = build_staged_game(StagedGameSpec())
    world = World(ExperimentConfig(game="staged", tie_break="index"), staged, 0)
    total, _ = evaluate_greedy(world, 1)
    # all-zero policies follow whichever stage-1 outcome joint action (0, 0, 0) leads to
    s, r = staged.initial_state, 0.0
    for _ in range(staged.horizon):
        nxt = int(staged.transition[(s, 0, 0, 0)])
        r += float(staged.reward[s, nxt])
        s = nxt
        if staged.is_terminal(s):
            break
    assert total == r
    policy = enumerate_optimal_joint_policies(staged, joint_value_iteration(staged, 1.0))[0]
    for s, joint in policy.items():
        for k, agent in enumerate(world.agents):
            agent.q_ssa[s, joint[k]] = 1.0
    assert evaluate_greedy(world, 2)[0] == 100.0


def test_summarize_single_run_has_zero_std(tmp_path):
    cfg = ExperimentConfig(t_max=400, num_runs=1)
    path = run_experiment(cfg, tmp_path)
    (sm,) = summarize([path], tmp_path / "summary")
    assert sm.runs == 1 and all(sd == 0.0 for sd in sm.std)
    assert sm.method == "SMA-iqss"
    assert (tmp_path / "summary" / "final.csv").exists()


def test_summarize_identical_runs_mean_equals_single_curve(tmp_path):
    cfg = ExperimentConfig(t_max=400, num_runs=1)
    single = read_metrics(run_experiment(cfg, tmp_path / "one"))
    rows = [{**row, "run": r} for r in range(15) for row in single]
    from roma_iqss.harness import summarize_rows

    sm = summarize_rows("x", rows)
    assert sm.mean == [row["eval_return"] for row in single]


def test_schema_error_names_file_and_column(tmp_path):
    bad = tmp_path / "metrics.csv"
    bad.write_text("run,seed,time,eval_return,reached_optimum,aligned\n")
    with pytest.raises(SchemaError, match=r"metrics\.csv.*column 2.*'t'.*'time'"):
        read_metrics(bad)


@pytest.mark.parametrize("seed", range(4))
def test_sma_iqss_learns_optimal_values_on_small_games(seed):
    """Under persistent exploration the induced values match the joint optimum."""
    game = build_random_game(2, 6, 2, rng_seed=seed, terminal_fraction=0.2, horizon=8)
    params = Hyperparams(alpha=0.2, gamma=0.9, epsilon=1.0)
    cfg = ExperimentConfig(game="random", params=params, t_max=20_000, eval_every=20_000)
    _, world = run_single(cfg, 0, game=game)
    solution = joint_value_iteration(game, 0.9)
    checked = 0
    for agent in world.agents:
        for s in agent.known_states():
            if game.is_terminal(s) or len(agent.buffer) == 0:
                continue
            assert max(agent.action_values(s)) == pytest.approx(solution.v_star[s], abs=1e-3)
            checked += 1
    assert checked > 0


def _write(tmp_path, text, name="cfg.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_simulate_and_summarize(tmp_path, capsys):
    cfg = _write(tmp_path, ROMA_TEXT)
    assert main(["simulate", "--config", cfg, "--runs", "1", "--out", str(tmp_path / "out")]) == 0
    assert main(["summarize", "--in", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "ROMA-iqss,1,100," in out


def test_cli_validate_and_solve(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, ROMA_TEXT)]) == 0
    game_file = tmp_path / "g.txt"
    save_game(build_two_optima_matrix_game(), game_file)
    assert main(["solve", "--game", str(game_file)]) == 0
    out = capsys.readouterr().out
    assert "# qss_star" in out
    assert "0:0,0" in out and "0:1,1" in out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, "method = ROMA-cenq\nt_u = 5\n")]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["summarize", "--in", str(tmp_path)]) == 2
    bad = tmp_path / "bad" / "metrics.csv"
    bad.parent.mkdir()
    bad.write_text("nope\n")
    assert main(["summarize", "--in", str(tmp_path / "bad")]) == 3
    assert "config error" in capsys.readouterr().err


def test_transition_models_are_private_per_agent():
    cfg = ExperimentConfig(game="staged", t_max=2000)
    _, world = run_single(cfg, 0)
    models = [agent.model for agent in world.agents]
    assert len({id(m.weights) for m in models}) == len(models)
    assert not np.array_equal(models[0].weights, models[1].weights)
