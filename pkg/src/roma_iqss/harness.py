"""Seeded experiment orchestration: config, interaction/learning loop, greedy evaluation, metrics."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import envs
from .game import InvalidInputError, TabularGame, Transition, load_game, run_episode
from .learners import CQSS, CENQ, CentralLearner, Hyperparams, IndqLearner, IqssLearner
from .oracle import JointSolution, OracleSizeError, joint_value_iteration
from . import engine
from .schedulers import Mode, ScheduleConfig, StepDirective, directive_at, directive_masks, format_directive

log = logging.getLogger(__name__)

METRICS_HEADER = ("run", "seed", "t", "eval_return", "reached_optimum", "aligned")
LEARNERS = ("iqss", "indq", CENQ, CQSS)
TIE_BREAKS = ("agent_seeded", "index")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every offending field."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class SchemaError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    game: str = "two_optima"
    game_params: dict[str, str] = field(default_factory=dict)
    interaction: Mode = Mode.SMA
    learner: str = "iqss"
    params: Hyperparams = field(default_factory=Hyperparams)
    t_max: int = 4000
    t_u: int | None = None
    n_rounds: int | None = None
    eval_every: int | None = None  # default: t_max / 100
    eval_episodes: int = 1
    num_runs: int = 15
    base_seed: int = 0
    out: str = "results"
    # agent_seeded: each agent breaks exact value ties by its own seeded action order
    tie_break: str = "agent_seeded"
    trace: bool = False

    @property
    def method(self) -> str:
        return f"{Mode(self.interaction).value}-{self.learner}"

    @property
    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(Mode(self.interaction), self.t_max, self.t_u, self.n_rounds)

    @property
    def eval_interval(self) -> int:
        if self.eval_every:
            return self.eval_every
        return max(1, self.t_max // 100)

    def validate(self, game: TabularGame | None = None) -> None:
        problems = []
        if self.learner not in LEARNERS:
            problems.append(f"learner: unknown {self.learner!r}, expected one of {LEARNERS}")
        if self.learner in (CENQ, CQSS) and Mode(self.interaction) is not Mode.SMA:
            problems.append(f"method: centralized learner {self.learner} only runs under SMA")
        if self.num_runs < 1:
            problems.append("num_runs: must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            problems.append("eval_every: must be >= 1")
        if self.eval_episodes < 1:
            problems.append("eval_episodes: must be >= 1")
        if self.tie_break not in TIE_BREAKS:
            problems.append(f"tie_break: unknown {self.tie_break!r}")
        if game is None:
            try:
                game = build_game(self.game, self.game_params)
            except (InvalidInputError, ValueError, OSError) as exc:
                problems.append(f"game: {exc}")
        if game is not None:
            problems.extend(f"schedule: {p}" for p in self.schedule.validate(game.num_agents))
        if problems:
            raise ConfigError(problems)


# -- config files -----------------------------------------------------------------

_INT_KEYS = {"t_max", "t_u", "n_rounds", "eval_every", "eval_episodes", "num_runs", "base_seed"}
_PARAM_KEYS = {f.name for f in dataclasses.fields(Hyperparams)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat ``key = value`` format; ``#`` starts a comment.

    ``method = ROMA-iqss`` selects interaction and learner, ``game = staged`` a
    builder and ``game.<name> = value`` its parameters. Hyperparameter keys are
    the :class:`Hyperparams` field names.
    """
    cfg = ExperimentConfig()
    params: dict[str, float | int] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key.startswith("game."):
                cfg.game_params[key[5:]] = value
            elif key == "game":
                cfg.game = value
            elif key == "method":
                interaction, _, learner = value.rpartition("-")
                cfg.interaction = Mode(interaction)
                cfg.learner = learner
            elif key in _INT_KEYS:
                setattr(cfg, key, int(value) if value.lower() != "none" else None)
            elif key in _PARAM_KEYS:
                params[key] = int(value) if key in ("batch_size", "buffer_size") else float(value)
            elif key == "out":
                cfg.out = value
            elif key == "tie_break":
                cfg.tie_break = value
            elif key == "trace":
                cfg.trace = value.lower() in ("1", "true", "yes")
            else:
                problems.append(f"{key}: unknown key (line {lineno})")
        except ValueError as exc:
            problems.append(f"{key}: bad value {value!r} ({exc})")
    try:
        cfg.params = Hyperparams(**params)
    except ValueError as exc:
        problems.append(f"hyperparams: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: ExperimentConfig) -> str:
    lines = [f"game = {cfg.game}"]
    lines += [f"game.{k} = {v}" for k, v in sorted(cfg.game_params.items())]
    lines.append(f"method = {cfg.method}")
    for f in dataclasses.fields(Hyperparams):
        lines.append(f"{f.name} = {getattr(cfg.params, f.name)}")
    for key in ("t_max", "t_u", "n_rounds", "eval_every", "eval_episodes", "num_runs", "base_seed"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append(f"tie_break = {cfg.tie_break}")
    lines.append(f"out = {cfg.out}")
    return "\n".join(lines) + "\n"


def _float(params: dict, key: str, default: float) -> float:
    return float(params.get(key, default))


def _int(params: dict, key: str, default: int) -> int:
    return int(params.get(key, default))


def build_game(name: str, params: dict | None = None) -> TabularGame:
    params = dict(params or {})
    if name == "two_optima":
        return envs.build_two_optima_matrix_game(
            _float(params, "reward_success", envs.REWARD_SUCCESS),
            _float(params, "reward_divergent", envs.REWARD_DIVERGENT),
        )
    if name == "staged":
        spec = envs.StagedGameSpec(
            num_agents=_int(params, "num_agents", 3),
            num_stages=_int(params, "num_stages", 3),
            actions_per_stage=_int(params, "actions_per_stage", 3),
            reward_success=_float(params, "reward_success", envs.REWARD_SUCCESS),
            reward_divergent=_float(params, "reward_divergent", envs.REWARD_DIVERGENT),
            suboptimal_reward_range=(
                _float(params, "suboptimal_low", 0.0),
                _float(params, "suboptimal_high", 10.0),
            ),
            rng_seed=_int(params, "rng_seed", 0),
        )
        return envs.build_staged_game(spec)
    if name == "chain":
        horizon = params.get("horizon")
        return envs.build_single_agent_chain(_int(params, "n", 5), int(horizon) if horizon else None)
    if name == "random":
        return envs.build_random_game(
            _int(params, "num_agents", 2),
            _int(params, "num_states", 10),
            _int(params, "num_actions", 2),
            _int(params, "rng_seed", 0),
            terminal_fraction=_float(params, "terminal_fraction", 0.1),
            horizon=_int(params, "horizon", 10),
        )
    if name == "file":
        if "path" not in params:
            raise InvalidInputError("game 'file' needs game.path")
        return load_game(params["path"])
    raise InvalidInputError(f"unknown game builder {name!r}")


# -- the simulated world --------------------------------------------------------------


def _seed_streams(seed: int, count: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)]


class World:
    """One isolated run: game, learners and private random streams for each agent."""

    def __init__(self, cfg: ExperimentConfig, game: TabularGame, seed: int):
        self.cfg = cfg
        self.game = game
        self.seed = seed
        k = game.num_agents
        streams = _seed_streams(seed, 3 * k + 1)
        self.act_rngs = [np.random.default_rng(x) for x in streams[:k]]
        self.learn_rngs = [np.random.default_rng(x) for x in streams[k : 2 * k]]
        tie_rngs = [random.Random(x) for x in streams[2 * k : 3 * k]]
        self.central: CentralLearner | None = None
        self.strides = np.array([math.prod(game.num_actions[i + 1 :]) for i in range(k)], dtype=np.int64)
        self.central_rng = np.random.default_rng(streams[-1])
        p, terminal = cfg.params, game.terminal_states
        if cfg.learner in (CENQ, CQSS):
            self.central = CentralLearner(cfg.learner, game.num_actions, p, terminal)
            self.agents = [self.central.agent_view(i) for i in range(k)]
            return
        cls = IqssLearner if cfg.learner == "iqss" else IndqLearner
        self.agents = []
        for i in range(k):
            order = list(range(game.num_actions[i]))
            if cfg.tie_break == "agent_seeded":
                tie_rngs[i].shuffle(order)
            self.agents.append(cls(i, game.num_states, game.num_actions[i], p, terminal, order))

    def greedy_policies(self) -> list[Callable[[int, random.Random], int]]:
        return [lambda s, rng, agent=agent: agent.greedy_action(s) for agent in self.agents]


def evaluate_greedy(world: World, episodes: int) -> tuple[float, list[Transition]]:
    """Mean undiscounted return of frozen greedy joint rollouts, plus the last rollout."""
    total, trajectory = 0.0, []
    for e in range(episodes):
        trajectory, ret = run_episode(world.game, world.greedy_policies(), rng_seed=e)
        total += ret
    return total / episodes, trajectory


def _reached_optimum(world: World, solution: JointSolution, trajectory: Sequence[Transition]) -> bool:
    """Every agent's greedy action on the rollout extends to some optimal joint action."""
    game = world.game
    joint = np.array(game.joint_actions())
    for depth, tr in enumerate(trajectory):
        q = solution.q_by_steps_left[game.horizon - depth][tr.s]
        optimal = joint[q >= q.max() - 1e-9]
        for k, agent in enumerate(world.agents):
            if not (optimal[:, k] == agent.greedy_action(tr.s)).any():
                return False
    return True


@dataclass
class MetricsRow:
    run: int
    seed: int
    t: int
    eval_return: float
    reached_optimum: bool
    aligned: bool

    def cells(self) -> list[str]:
        return [
            str(self.run),
            str(self.seed),
            str(self.t),
            repr(float(self.eval_return)),
            str(int(self.reached_optimum)),
            str(int(self.aligned)),
        ]


TraceSink = Callable[[int, StepDirective, int, tuple[int, ...], int], None]


def run_single(
    cfg: ExperimentConfig,
    run: int,
    game: TabularGame | None = None,
    solution: JointSolution | None = None,
    trace: TraceSink | None = None,
) -> tuple[list[MetricsRow], World]:
    """Train one seeded run; returns its metric rows and the final world."""
    game = game or build_game(cfg.game, cfg.game_params)
    if solution is None:
        solution = _oracle_for(game)
    seed = cfg.base_seed + run
    world = World(cfg, game, seed)
    best = float(solution.v_star[game.initial_state]) if solution else math.nan
    interval = cfg.eval_interval
    rows: list[MetricsRow] = []
    step_segment = _python_segment if world.central is not None else _compiled_segment
    cursor = np.array([game.initial_state, 0], dtype=np.int64)
    t = 0
    while t < cfg.t_max:
        t_end = min(cfg.t_max, (t // interval + 1) * interval, t + SEGMENT_STEPS)
        step_segment(world, t + 1, t_end, cursor, trace)
        t = t_end
        if t % interval == 0 or t == cfg.t_max:
            ret, trajectory = evaluate_greedy(world, cfg.eval_episodes)
            reached = _reached_optimum(world, solution, trajectory) if solution else False
            aligned = bool(solution) and abs(ret - best) <= 1e-9 * max(1.0, abs(best))
            rows.append(MetricsRow(run, seed, t, ret, reached, aligned))
    return rows, world


SEGMENT_STEPS = 4096


def _python_segment(world: World, t_first: int, t_last: int, cursor: np.ndarray, trace: TraceSink | None) -> None:
    """Steps t_first..t_last for the centralized baselines."""
    game, central = world.game, world.central
    schedule, k = world.cfg.schedule, game.num_agents
    s, ep_len = int(cursor[0]), int(cursor[1])
    for t in range(t_first, t_last + 1):
        d = directive_at(t, schedule, k)
        a = tuple(world.agents[i].select_action(s, d.behaviors[i], world.act_rngs[i]) for i in range(k))
        s_next = int(game.transition[(s, *a)])
        central.record(Transition(s, a, s_next, float(game.reward[s, s_next])))
        central.learn(world.central_rng)
        if trace is not None:
            trace(t, d, s, a, s_next)
        ep_len += 1
        if game._terminal_mask[s_next] or ep_len >= game.horizon:
            s, ep_len = game.initial_state, 0
        else:
            s = s_next
    cursor[:] = s, ep_len


def _compiled_segment(world: World, t_first: int, t_last: int, cursor: np.ndarray, trace: TraceSink | None) -> None:
    """Steps t_first..t_last for the decentralized learners, run by the compiled loop."""
    game, agents, p = world.game, world.agents, world.cfg.params
    k, n = game.num_agents, t_last - t_first + 1
    explore, record, learn = directive_masks(t_first, t_last, world.cfg.schedule, k)
    act_u = np.stack([rng.random((n, 2)) for rng in world.act_rngs])
    learn_u = np.stack([rng.random((n, p.batch_size)) for rng in world.learn_rngs])
    for agent in agents:
        agent.buffer.reserve(n)
    iqss = isinstance(agents[0], IqssLearner)
    if iqss:
        weights = tuple(x.model.weights for x in agents)
        totals = tuple(x.model.totals for x in agents)
        increments = tuple(x.model.increments for x in agents)
        z_hat = tuple(x.z_hat for x in agents)
        q_ss = tuple(x.q_ss for x in agents)
        values = tuple(x.q_ssa for x in agents)
        visited = (np.zeros(1, dtype=np.bool_),) * k
    else:
        weights, totals = (np.zeros((1, 1, 1)),) * k, (np.zeros((1, 1)),) * k
        increments = totals
        z_hat, q_ss = (np.zeros((1, 1), dtype=np.int64),) * k, (np.zeros((1, 1)),) * k
        values = tuple(x.q for x in agents)
        visited = tuple(x._visited for x in agents)
    log_s = np.empty(n, dtype=np.int64)
    log_next = np.empty(n, dtype=np.int64)
    log_a = np.empty((n, k), dtype=np.int64)
    engine.run_segment(
        engine.IQSS if iqss else engine.INDQ,
        game._flat, world.strides, game.reward, game._terminal_mask, game.horizon, game.initial_state, cursor,
        explore, record, learn, act_u, learn_u, p.epsilon,
        tuple(np.array(x.action_order, dtype=np.int64) for x in agents),
        np.array(game.num_actions, dtype=np.int64),
        weights, totals, increments, z_hat, q_ss, values, visited,
        tuple(x.buffer.transitions for x in agents),
        tuple(x.buffer.rewards for x in agents),
        tuple(x.buffer.meta for x in agents),
        p.buffer_size, p.alpha, p.gamma, p.delta, p.decay,
        log_s, log_a, log_next,
    )
    if trace is not None:
        for i in range(n):
            t = t_first + i
            trace(t, directive_at(t, world.cfg.schedule, k), int(log_s[i]), tuple(int(x) for x in log_a[i]), int(log_next[i]))


def _oracle_for(game: TabularGame) -> JointSolution | None:
    try:
        return joint_value_iteration(game, 1.0)
    except OracleSizeError:
        log.warning("game too large for the oracle; reached_optimum/aligned flags disabled")
        return None


def _write_rows(path: Path, rows: Iterable[MetricsRow]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.cells())


def _trace_writer(fh) -> TraceSink:
    def sink(t, d, s, a, s_next):
        fh.write(f"{format_directive(t, d)} s={s} a={','.join(map(str, a))} s'={s_next}\n")

    return sink


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Run every seed, write per-run CSVs under ``runs/`` and merge them into ``metrics.csv``."""
    game = build_game(cfg.game, cfg.game_params)
    cfg.validate(game)
    out = Path(out_dir or cfg.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    solution = _oracle_for(game)
    run_files = []
    for run in range(cfg.num_runs):
        trace_fh = None
        sink: TraceSink | None = None
        if cfg.trace:
            trace_fh = (out / "runs" / f"trace_{run:03d}.txt").open("w")
            sink = _trace_writer(trace_fh)

        try:
            rows, _ = run_single(cfg, run, game, solution, sink)
        finally:
            if trace_fh is not None:
                trace_fh.close()
        path = out / "runs" / f"run_{run:03d}.csv"
        _write_rows(path, rows)
        run_files.append(path)
        if rows:
            log.info("%s run %d seed %d final return %s", cfg.method, run, rows[-1].seed, rows[-1].eval_return)
    merged = out / "metrics.csv"
    with merged.open("w", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for path in run_files:
            fh.writelines(path.read_text().splitlines(keepends=True)[1:])
    return merged


# -- summaries ---------------------------------------------------------------------------


@dataclass
class MethodSummary:
    method: str
    runs: int
    t: list[int]
    mean: list[float]
    std: list[float]
    final_mean: float
    final_std: float
    alignment_rate: float
    optimum_rate: float


def read_metrics(path: str | Path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            got = list(header or [])
            for i, col in enumerate(METRICS_HEADER):
                if i >= len(got) or got[i] != col:
                    raise SchemaError(f"{path}: column {i} should be {col!r}, found {got[i] if i < len(got) else None!r}")
            raise SchemaError(f"{path}: unexpected extra columns {got[len(METRICS_HEADER):]}")
        rows = []
        for lineno, cells in enumerate(reader, 2):
            if len(cells) != len(METRICS_HEADER):
                raise SchemaError(f"{path}:{lineno}: expected {len(METRICS_HEADER)} columns")
            try:
                rows.append(
                    {
                        "run": int(cells[0]),
                        "seed": int(cells[1]),
                        "t": int(cells[2]),
                        "eval_return": float(cells[3]),
                        "reached_optimum": cells[4] == "1",
                        "aligned": cells[5] == "1",
                    }
                )
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric value") from None
    return rows


def _method_name(path: Path) -> str:
    config = path.parent / "config.txt"
    if config.exists():
        for line in config.read_text().splitlines():
            key, _, value = line.partition("=")
            if key.strip() == "method":
                return value.strip()
    return path.parent.name or path.stem


def summarize_rows(method: str, rows: Sequence[dict]) -> MethodSummary:
    by_t: dict[int, list[float]] = {}
    last: dict[int, dict] = {}
    for row in rows:
        by_t.setdefault(row["t"], []).append(row["eval_return"])
        if row["run"] not in last or row["t"] >= last[row["run"]]["t"]:
            last[row["run"]] = row
    ts = sorted(by_t)
    mean = [float(np.mean(by_t[t])) for t in ts]
    std = [float(np.std(by_t[t])) for t in ts]
    finals = [row["eval_return"] for row in last.values()]
    n = len(last)
    return MethodSummary(
        method=method,
        runs=n,
        t=ts,
        mean=mean,
        std=std,
        final_mean=float(np.mean(finals)) if finals else math.nan,
        final_std=float(np.std(finals)) if finals else math.nan,
        alignment_rate=sum(r["aligned"] for r in last.values()) / n if n else math.nan,
        optimum_rate=sum(r["reached_optimum"] for r in last.values()) / n if n else math.nan,
    )


def summarize(
    metrics_files: Sequence[str | Path], out_dir: str | Path | None = None, plot: bool = False
) -> list[MethodSummary]:
    """Per-method mean/std curves and final alignment rates; optionally writes CSVs and plots."""
    if not metrics_files:
        raise ValueError("summarize needs at least one metrics file")
    summaries = [summarize_rows(_method_name(Path(p)), read_metrics(p)) for p in metrics_files]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        buf.write("method,t,mean_return,std_return,runs\n")
        for sm in summaries:
            for t, m, sd in zip(sm.t, sm.mean, sm.std):
                buf.write(f"{sm.method},{t},{m!r},{sd!r},{sm.runs}\n")
        (out / "summary.csv").write_text(buf.getvalue())
        buf = io.StringIO()
        buf.write("method,runs,final_mean,final_std,alignment_rate,optimum_rate\n")
        for sm in summaries:
            buf.write(
                f"{sm.method},{sm.runs},{sm.final_mean!r},{sm.final_std!r},"
                f"{sm.alignment_rate!r},{sm.optimum_rate!r}\n"
            )
        (out / "final.csv").write_text(buf.getvalue())
        if plot:
            _plot(summaries, out / "returns.png")
    return summaries


def _plot(summaries: Sequence[MethodSummary], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for sm in summaries:
        mean, std = np.array(sm.mean), np.array(sm.std)
        ax.plot(sm.t, mean, label=sm.method)
        ax.fill_between(sm.t, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("step")
    ax.set_ylabel("greedy return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
