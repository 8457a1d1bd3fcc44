"""Q-learning machinery: replay buffer, epsilon-greedy policy, targets, and
the natural-gradient / first-order update rules plus the training loop.

The natural-gradient update solves (G + d*I) x = g per minibatch, where G is
the batch Fisher operator, and steps theta <- theta - alpha * x with a
geometrically decayed learning rate.  The first-order baseline shares the
target and loss code paths; the only difference is the update rule (plain
descent, optionally with a periodically synced target network).
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import net as qnet
from .envs import EnvKind, make_env
from .fisher import DampingState, FisherOperator, update_damping
from .net import ActivationKind, LayerSpec, Mlp, QBatch
from .solvers import SolveConfig, SolveReport, SolverKind, lincg_solve, minres_qlp_solve


class Method(enum.Enum):
    NGDQN = "ngdqn"
    DQN = "dqn"


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class TransitionBatch:
    """Column view of sampled transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.empty((capacity, obs_dim))
        self._actions = np.empty(capacity, dtype=np.int64)
        self._rewards = np.empty(capacity)
        self._next_states = np.empty((capacity, obs_dim))
        self._terminals = np.empty(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._next
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._terminals[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, k: int) -> TransitionBatch:
        if k > self._size:
            raise ValueError(f"cannot sample {k} from buffer of size {self._size}")
        idx = rng.choice(self._size, size=k, replace=False)
        return TransitionBatch(
            states=self._states[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            terminals=self._terminals[idx].copy(),
        )


@dataclass
class EpsilonSchedule:
    epsilon: float = 1.0
    decay: float = 0.995
    floor: float = 0.02

    def step(self) -> None:
        self.epsilon = max(self.floor, self.epsilon * self.decay)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    gamma: float = 1.0
    alpha0: float = 0.01
    alpha_decay: float = 1.0 - 7e-5
    batch_size: int = 128
    buffer_capacity: int = 50_000
    hidden: tuple[int, ...] = (64,)
    activation: ActivationKind = ActivationKind.TANH
    epsilon0: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.02
    beta: float = 1.0
    solver: SolveConfig = field(default_factory=SolveConfig)
    damping: DampingState = field(default_factory=DampingState)
    target_update_freq: int | None = None  # baseline DQN only
    bootstrap_on_truncation: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.alpha0 <= 0 or not (0.0 < self.alpha_decay <= 1.0):
            raise ValueError("alpha0 must be > 0 and alpha_decay in (0, 1]")
        if self.batch_size < 1 or self.episodes < 1:
            raise ValueError("batch_size and episodes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "gamma": self.gamma,
            "alpha0": self.alpha0,
            "alpha_decay": self.alpha_decay,
            "batch_size": self.batch_size,
            "buffer_capacity": self.buffer_capacity,
            "hidden": list(self.hidden),
            "activation": self.activation.value,
            "epsilon0": self.epsilon0,
            "epsilon_decay": self.epsilon_decay,
            "epsilon_floor": self.epsilon_floor,
            "beta": self.beta,
            "solver": {
                "kind": self.solver.kind.value,
                "tol": self.solver.tol,
                "max_iter": self.solver.max_iter,
            },
            "damping": {
                "d": self.damping.d,
                "adapt": self.damping.adapt,
                "increase_factor": self.damping.increase_factor,
                "decrease_factor": self.damping.decrease_factor,
                "rho_low": self.damping.rho_low,
                "rho_high": self.damping.rho_high,
                "d_min": self.damping.d_min,
                "d_max": self.damping.d_max,
            },
            "target_update_freq": self.target_update_freq,
            "bootstrap_on_truncation": self.bootstrap_on_truncation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "solver" in d:
            s = d["solver"]
            d["solver"] = SolveConfig(
                kind=SolverKind(s.get("kind", "minres_qlp")),
                tol=s.get("tol", 1e-6),
                max_iter=s.get("max_iter", 250),
            )
        if "damping" in d:
            d["damping"] = DampingState(**d["damping"])
        if "activation" in d:
            d["activation"] = ActivationKind(d["activation"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    episode_rewards: list[float]
    best_100_avg: float | None
    wall_time: float
    config_fingerprint: str
    seed: int
    finished: bool = True
    solver_iterations_mean: float = 0.0
    n_updates: int = 0

    @property
    def moving_avg_100(self) -> list[float | None]:
        """Mean of the trailing 100-episode window, None before 100 episodes."""
        out: list[float | None] = []
        r = self.episode_rewards
        csum = np.concatenate([[0.0], np.cumsum(r)])
        for i in range(len(r)):
            if i >= 99:
                out.append(float((csum[i + 1] - csum[i - 99]) / 100.0))
            else:
                out.append(None)
        return out


def best_100_average(rewards: list[float]) -> float | None:
    """Max over all 100-episode windows of the mean reward."""
    if len(rewards) < 100:
        return None
    r = np.asarray(rewards)
    csum = np.concatenate([[0.0], np.cumsum(r)])
    windows = (csum[100:] - csum[:-100]) / 100.0
    return float(windows.max())


def select_action(net: Mlp, state: np.ndarray, eps: EpsilonSchedule, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties break to the lowest index."""
    n_actions = net.spec.action_count
    if rng.random() < eps.epsilon:
        return int(rng.integers(n_actions))
    q = qnet.forward(net, state[None, :])[0]
    return int(np.argmax(q))


def compute_targets(
    net: Mlp,
    minibatch: TransitionBatch,
    gamma: float,
    target_net: Mlp | None = None,
) -> QBatch:
    """TD targets: y = r for terminal next states, else r + gamma*max_a' Q(s',a').

    Bootstrapping uses the online net unless a frozen target net is supplied.
    """
    bootstrap_net = target_net if target_net is not None else net
    q_next = qnet.forward(bootstrap_net, minibatch.next_states)
    y = minibatch.rewards + gamma * q_next.max(axis=1) * (~minibatch.terminals)
    return QBatch(states=minibatch.states, actions=minibatch.actions, targets=y)


def _solve_direction(apply, g: np.ndarray, cfg: SolveConfig) -> SolveReport:
    if cfg.kind is SolverKind.LINEAR_CG:
        return lincg_solve(apply, g, cfg)
    if cfg.kind is SolverKind.MINRES_QLP:
        return minres_qlp_solve(apply, g, cfg)
    raise ValueError("training solves must use a Krylov solver")


def ngdqn_step(
    net: Mlp,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    damping: DampingState,
    alpha: float,
    rng: np.random.Generator,
) -> tuple[Mlp, DampingState, float, SolveReport]:
    """One natural-gradient update from a sampled minibatch.

    Returns the updated network, damping state, decayed learning rate, and
    the solve report.  The Fisher operator is built from the minibatch's
    states only.
    """
    minibatch = buffer.sample(rng, cfg.batch_size)
    batch = compute_targets(net, minibatch, cfg.gamma)
    g = qnet.grad_loss(net, batch)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite loss gradient in natural-gradient step")
    op = FisherOperator(net, batch.states, beta=cfg.beta)
    d = damping.d
    report = _solve_direction(lambda v: op.apply(v) + d * v, g, cfg.solver)
    x = report.x
    new_net = qnet.unflatten(net, qnet.flatten(net) - alpha * x)
    if damping.adapt and report.iterations > 0:
        # reduction ratio on the same minibatch: actual vs damped quadratic model
        actual = qnet.loss(net, batch) - qnet.loss(new_net, batch)
        predicted = alpha * float(g @ x) - 0.5 * alpha * alpha * float(
            x @ (op.apply(x) + d * x)
        )
        if abs(predicted) >= 1e-12:
            damping = update_damping(damping, actual / predicted)
    return new_net, damping, alpha * cfg.alpha_decay, report


def dqn_step(
    net: Mlp,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    alpha: float,
    rng: np.random.Generator,
    target_net: Mlp | None = None,
) -> Mlp:
    """One plain first-order update, sharing the NGDQN target/loss path."""
    minibatch = buffer.sample(rng, cfg.batch_size)
    batch = compute_targets(net, minibatch, cfg.gamma, target_net=target_net)
    g = qnet.grad_loss(net, batch)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite loss gradient in DQN step")
    return qnet.unflatten(net, qnet.flatten(net) - alpha * g)


def train(env_kind: EnvKind, cfg: TrainConfig, method: Method) -> RunRecord:
    """Run the full training loop for cfg.episodes episodes.

    Single-threaded and bit-reproducible for a fixed seed/config/method.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    env = make_env(env_kind)
    spec = LayerSpec((env_kind.obs_dim, *cfg.hidden, env_kind.n_actions))
    net = qnet.init_network(spec, cfg.activation, seed=cfg.seed)
    target_net = None
    if method is Method.DQN and cfg.target_update_freq is not None:
        target_net = qnet.unflatten(net, qnet.flatten(net))
    buffer = ReplayBuffer(cfg.buffer_capacity, env_kind.obs_dim)
    eps = EpsilonSchedule(cfg.epsilon0, cfg.epsilon_decay, cfg.epsilon_floor)
    damping = cfg.damping
    alpha = cfg.alpha0
    rewards: list[float] = []
    solver_iters_total = 0
    n_updates = 0
    finished = True
    try:
        for _episode in range(cfg.episodes):
            obs = env.reset(rng)
            ep_reward = 0.0
            done = False
            while not done:
                action = select_action(net, obs, eps, rng)
                result = env.step(action)
                ep_reward += result.reward
                # time-limit truncation is not a terminal for bootstrapping
                terminal = (
                    result.terminal
                    if cfg.bootstrap_on_truncation
                    else (result.terminal or result.truncated)
                )
                buffer.push(
                    Transition(obs, action, result.reward, result.observation, terminal)
                )
                obs = result.observation
                done = result.terminal or result.truncated
                if len(buffer) >= cfg.batch_size:
                    if method is Method.NGDQN:
                        net, damping, alpha, report = ngdqn_step(
                            net, buffer, cfg, damping, alpha, rng
                        )
                        solver_iters_total += report.iterations
                    else:
                        net = dqn_step(net, buffer, cfg, alpha, rng, target_net)
                        alpha *= cfg.alpha_decay
                    n_updates += 1
                    if (
                        target_net is not None
                        and cfg.target_update_freq is not None
                        and n_updates % cfg.target_update_freq == 0
                    ):
                        target_net = qnet.unflatten(net, qnet.flatten(net))
            rewards.append(ep_reward)
            eps.step()
    except FloatingPointError:
        finished = False
    return RunRecord(
        episode_rewards=rewards,
        best_100_avg=best_100_average(rewards),
        wall_time=time.perf_counter() - t0,
        config_fingerprint=cfg.fingerprint(),
        seed=cfg.seed,
        finished=finished,
        solver_iterations_mean=(solver_iters_total / n_updates) if n_updates else 0.0,
        n_updates=n_updates,
    )
