"""Experiment orchestration: multi-seed trials, hyperparameter grid search,
and the inversion-method diagnostics study, with CSV/JSON outputs.

Output schemas
--------------
Training CSV: header ``episode,reward,moving_avg_100``; one row per episode;
``moving_avg_100`` is empty until 100 episodes exist.  Floats are written
with ``repr`` so re-parsing reproduces them exactly.

Summary JSON keys: ``config_fingerprint``, ``seed`` (or ``seeds``),
``best_100_avg`` (or per-seed list + ``mean`` + ``iqr``), ``wall_time``,
``config`` (full echo), ``solver_iterations_mean``, ``n_updates``.

Diagnostics CSV: header ``batch,angle_cg_deg,angle_mrqlp_deg,norm_true,
norm_cg,norm_mrqlp,time_true_ms,time_cg_ms,time_mrqlp_ms,max_eig,damping,
damping_ratio``.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import net as qnet
from .envs import EnvKind, make_env
from .fisher import (
    EigenEstimateConfig,
    FisherOperator,
    gauss_jordan_inverse,
    explicit_fisher,
    max_eigenvalue,
    update_damping,
)
from .net import ActivationKind, LayerSpec
from .rl import (
    EpsilonSchedule,
    Method,
    ReplayBuffer,
    RunRecord,
    TrainConfig,
    Transition,
    compute_targets,
    select_action,
    train,
)
from .solvers import SolveConfig, SolverKind, lincg_solve, minres_qlp_solve


def _fmt(x) -> str:
    return repr(float(x))


# --- file emission -------------------------------------------------------

TRAINING_HEADER = ["episode", "reward", "moving_avg_100"]
DIAGNOSTICS_HEADER = [
    "batch",
    "angle_cg_deg",
    "angle_mrqlp_deg",
    "norm_true",
    "norm_cg",
    "norm_mrqlp",
    "time_true_ms",
    "time_cg_ms",
    "time_mrqlp_ms",
    "max_eig",
    "damping",
    "damping_ratio",
]


def write_training_csv(path, record: RunRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    moving = record.moving_avg_100
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAINING_HEADER)
        for i, r in enumerate(record.episode_rewards):
            m = moving[i]
            w.writerow([i + 1, _fmt(r), "" if m is None else _fmt(m)])


def read_training_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_run_summary(path, record: RunRecord, cfg: TrainConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        "config_fingerprint": record.config_fingerprint,
        "seed": record.seed,
        "best_100_avg": record.best_100_avg,
        "wall_time": record.wall_time,
        "finished": record.finished,
        "solver_iterations_mean": record.solver_iterations_mean,
        "n_updates": record.n_updates,
        "config": cfg.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


def validate_run_summary(summary: dict) -> None:
    """Schema check for run summary JSON; raises ValueError on mismatch."""
    required = {
        "config_fingerprint": str,
        "seed": int,
        "wall_time": (int, float),
        "finished": bool,
        "solver_iterations_mean": (int, float),
        "n_updates": int,
        "config": dict,
    }
    for key, typ in required.items():
        if key not in summary:
            raise ValueError(f"summary missing key {key!r}")
        if not isinstance(summary[key], typ):
            raise ValueError(f"summary key {key!r} has type {type(summary[key])}")
    b = summary.get("best_100_avg")
    if b is not None and not isinstance(b, (int, float)):
        raise ValueError("best_100_avg must be numeric or null")


# --- multi-seed trials ---------------------------------------------------

@dataclass
class TrialSummary:
    config_fingerprint: str
    seeds: list[int]
    best_100_avgs: list[float | None]
    wall_times: list[float]
    incomplete_seeds: list[int]
    mean: float | None
    iqr: float | None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _iqr(values: list[float]) -> float:
    q1, q3 = np.percentile(np.asarray(values), [25.0, 75.0])
    return float(q3 - q1)


def run_trials(
    env: EnvKind,
    cfg: TrainConfig,
    method: Method,
    n_seeds: int = 10,
    out_dir=None,
) -> TrialSummary:
    """n_seeds independent runs with seeds cfg.seed .. cfg.seed+n_seeds-1."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = [cfg.seed + i for i in range(n_seeds)]
    bests, walls, incomplete = [], [], []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        try:
            rec = train(env, run_cfg, method)
        except Exception:
            bests.append(None)
            walls.append(float("nan"))
            incomplete.append(seed)
            continue
        if not rec.finished:
            incomplete.append(seed)
        bests.append(rec.best_100_avg)
        walls.append(rec.wall_time)
        if out_dir is not None:
            write_training_csv(Path(out_dir) / f"{method.value}_seed{seed}.csv", rec)
            write_run_summary(Path(out_dir) / f"{method.value}_seed{seed}.json", rec, run_cfg)
    complete = [b for b in bests if b is not None]
    summary = TrialSummary(
        config_fingerprint=cfg.fingerprint(),
        seeds=seeds,
        best_100_avgs=bests,
        wall_times=walls,
        incomplete_seeds=incomplete,
        mean=float(np.mean(complete)) if complete else None,
        iqr=_iqr(complete) if len(complete) >= 2 else None,
    )
    if out_dir is not None:
        with open(Path(out_dir) / f"{method.value}_trials.json", "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
    return summary


# --- hyperparameter grid search ------------------------------------------

@dataclass(frozen=True)
class GridSpace:
    """Cartesian hyperparameter space.

    Enumeration order is deterministic: fields vary in the declared order
    with the last field changing fastest (itertools.product semantics).
    """

    learning_rate: tuple[float, ...] = (0.01, 0.1, 1.0)
    adapt_damping: tuple[bool, ...] = (True, False)
    batch_size: tuple[int, ...] = (32, 128)
    memory_length: tuple[int, ...] = (2500, 50_000)
    activation: tuple[str, ...] = ("tanh", "relu")
    # baseline-DQN-only axes; single None keeps them out of the NGDQN grid
    epsilon_decay: tuple[float | None, ...] = (None,)
    target_update_freq: tuple[int | None, ...] = (None,)

    def configurations(self) -> list[dict]:
        axes = [
            ("learning_rate", self.learning_rate),
            ("adapt_damping", self.adapt_damping),
            ("batch_size", self.batch_size),
            ("memory_length", self.memory_length),
            ("activation", self.activation),
            ("epsilon_decay", self.epsilon_decay),
            ("target_update_freq", self.target_update_freq),
        ]
        names = [n for n, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*[v for _, v in axes])]


def apply_grid_point(base: TrainConfig, point: dict) -> TrainConfig:
    cfg = replace(
        base,
        alpha0=point["learning_rate"],
        damping=replace(base.damping, adapt=point["adapt_damping"]),
        batch_size=point["batch_size"],
        buffer_capacity=point["memory_length"],
        activation=ActivationKind(point["activation"]),
    )
    if point.get("epsilon_decay") is not None:
        cfg = replace(cfg, epsilon_decay=point["epsilon_decay"])
    if point.get("target_update_freq") is not None:
        cfg = replace(cfg, target_update_freq=point["target_update_freq"])
    return cfg


def grid_search(
    env: EnvKind,
    space: GridSpace,
    method: Method,
    episodes: int,
    base_cfg: TrainConfig | None = None,
    out_dir=None,
) -> list[dict]:
    """One single-seed run per configuration; table sorted by ascending
    best-100 average.  Failed configs are kept in the table, flagged."""
    base = replace(base_cfg or TrainConfig(), episodes=episodes)
    rows = []
    for idx, point in enumerate(space.configurations()):
        cfg = apply_grid_point(base, point)
        row = {"config_id": idx, **point}
        try:
            rec = train(env, cfg, method)
            row["best_100_avg"] = rec.best_100_avg
            row["failed"] = not rec.finished
        except Exception:
            row["best_100_avg"] = None
            row["failed"] = True
        rows.append(row)
    ok = [r for r in rows if r["best_100_avg"] is not None]
    bad = [r for r in rows if r["best_100_avg"] is None]
    table = sorted(ok, key=lambda r: r["best_100_avg"]) + bad
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"grid_{method.value}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0].keys()))
            w.writeheader()
            w.writerows(table)
        best = next((r for r in reversed(table) if r["best_100_avg"] is not None), None)
        if best is not None:
            best_cfg = apply_grid_point(base, {k: best[k] for k in best if k not in ("config_id", "best_100_avg", "failed")})
            with open(out_dir / f"grid_{method.value}_best.json", "w") as fh:
                json.dump(best_cfg.to_dict(), fh, indent=2, sort_keys=True)
    return table


# --- inversion diagnostics ----------------------------------------------

@dataclass
class DiagnosticsRecord:
    batch: int
    angle_cg_deg: float
    angle_mrqlp_deg: float
    norm_true: float
    norm_cg: float
    norm_mrqlp: float
    time_true_ms: float
    time_cg_ms: float
    time_mrqlp_ms: float
    max_eig: float
    damping: float
    damping_ratio: float


def angle_degrees(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two update directions, in [0, 180] degrees."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(np.dot(a, b) / (na * nb))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def default_diagnostics_config() -> TrainConfig:
    return TrainConfig(
        episodes=100,
        alpha0=0.01,
        batch_size=128,
        buffer_capacity=50_000,
        hidden=(64,),
        activation=ActivationKind.TANH,
        damping=replace(TrainConfig().damping, adapt=True),
        solver=SolveConfig(kind=SolverKind.LINEAR_CG),
        seed=0,
    )


def inversion_diagnostics(
    episodes: int = 100,
    cfg: TrainConfig | None = None,
    env_kind: EnvKind = EnvKind.CARTPOLE_V0,
    eigen_cfg: EigenEstimateConfig | None = None,
    out_path=None,
) -> list[DiagnosticsRecord]:
    """Per-minibatch comparison of the three inversion methods.

    Each update solves the same damped system with Linear CG, MINRES-QLP,
    and an explicit Gauss-Jordan inversion of the dense Fisher matrix; only
    the Linear CG update is applied to the network.  Records angles against
    the true-inverse direction, update norms, solve wall times, the
    (undamped) maximal-eigenvalue estimate, and the damping ratio.
    Strictly sequential so solve timings stay comparable.
    """
    cfg = replace(cfg or default_diagnostics_config(), episodes=episodes)
    eigen_cfg = eigen_cfg or EigenEstimateConfig()
    rng = np.random.default_rng(cfg.seed)
    env = make_env(env_kind)
    spec = LayerSpec((env_kind.obs_dim, *cfg.hidden, env_kind.n_actions))
    net = qnet.init_network(spec, cfg.activation, seed=cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, env_kind.obs_dim)
    eps = EpsilonSchedule(cfg.epsilon0, cfg.epsilon_decay, cfg.epsilon_floor)
    damping = cfg.damping
    alpha = cfg.alpha0
    records: list[DiagnosticsRecord] = []
    batch_index = 0
    for _episode in range(cfg.episodes):
        obs = env.reset(rng)
        done = False
        while not done:
            action = select_action(net, obs, eps, rng)
            result = env.step(action)
            buffer.push(Transition(obs, action, result.reward, result.observation, result.terminal))
            obs = result.observation
            done = result.terminal or result.truncated
            if len(buffer) < cfg.batch_size:
                continue
            minibatch = buffer.sample(rng, cfg.batch_size)
            batch = compute_targets(net, minibatch, cfg.gamma)
            g = qnet.grad_loss(net, batch)
            op = FisherOperator(net, batch.states, beta=cfg.beta)
            d = damping.d
            apply_damped = lambda v: op.apply(v) + d * v  # noqa: E731

            t0 = time.perf_counter()
            try:
                dense = explicit_fisher(op) + d * np.eye(op.dim)
                x_true = gauss_jordan_inverse(dense) @ g
            except np.linalg.LinAlgError:
                batch_index += 1
                continue  # singular explicit inversion: skip this batch
            time_true = time.perf_counter() - t0

            rep_cg = lincg_solve(apply_damped, g, cfg.solver)
            rep_mr = minres_qlp_solve(apply_damped, g, cfg.solver)

            lam = max_eigenvalue(op.apply, op.dim, eigen_cfg)
            records.append(
                DiagnosticsRecord(
                    batch=batch_index,
                    angle_cg_deg=angle_degrees(x_true, rep_cg.x),
                    angle_mrqlp_deg=angle_degrees(x_true, rep_mr.x),
                    norm_true=float(np.linalg.norm(x_true)),
                    norm_cg=float(np.linalg.norm(rep_cg.x)),
                    norm_mrqlp=float(np.linalg.norm(rep_mr.x)),
                    time_true_ms=time_true * 1e3,
                    time_cg_ms=rep_cg.wall_time * 1e3,
                    time_mrqlp_ms=rep_mr.wall_time * 1e3,
                    max_eig=lam,
                    damping=d,
                    damping_ratio=d / lam if lam > 0 else float("inf"),
                )
            )
            batch_index += 1

            # apply only the Linear CG update
            x = rep_cg.x
            new_net = qnet.unflatten(net, qnet.flatten(net) - alpha * x)
            if damping.adapt and rep_cg.iterations > 0:
                actual = qnet.loss(net, batch) - qnet.loss(new_net, batch)
                predicted = alpha * float(g @ x) - 0.5 * alpha * alpha * float(x @ apply_damped(x))
                if abs(predicted) >= 1e-12:
                    damping = update_damping(damping, actual / predicted)
            net = new_net
            alpha *= cfg.alpha_decay
        eps.step()
    if out_path is not None:
        write_diagnostics_csv(out_path, records)
    return records


def write_diagnostics_csv(path, records: list[DiagnosticsRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGNOSTICS_HEADER)
        for r in records:
            w.writerow(
                [r.batch]
                + [
                    _fmt(v)
                    for v in (
                        r.angle_cg_deg,
                        r.angle_mrqlp_deg,
                        r.norm_true,
                        r.norm_cg,
                        r.norm_mrqlp,
                        r.time_true_ms,
                        r.time_cg_ms,
                        r.time_mrqlp_ms,
                        r.max_eig,
                        r.damping,
                        r.damping_ratio,
                    )
                ]
            )


def plot_moving_average(csv_paths, out_path) -> None:
    """Static SVG of the 100-episode moving averages in the given CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    for path in csv_paths:
        rows = read_training_csv(path)
        xs = [int(r["episode"]) for r in rows if r["moving_avg_100"]]
        ys = [float(r["moving_avg_100"]) for r in rows if r["moving_avg_100"]]
        ax.plot(xs, ys, label=Path(path).stem)
    ax.set_xlabel("episode")
    ax.set_ylabel("100-episode moving average reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
