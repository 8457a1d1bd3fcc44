"""Dense feedforward Q-network with exact gradients and Jacobian products.

All arithmetic is float64.  The network maps a batch of states (n, input_dim)
to Q-values (n, action_count); hidden layers use tanh or relu, the output
layer is always linear.

Flat parameter layout (used by ``flatten``/``unflatten`` and every solver):
layers in order, and within each layer the weight matrix W_l of shape
(n_in, n_out) in row-major (C) order followed by the bias vector b_l.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ActivationKind(enum.Enum):
    TANH = "tanh"
    RELU = "relu"


@dataclass(frozen=True)
class LayerSpec:
    """Layer widths, [input_dim, hidden..., action_count]."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("LayerSpec needs at least input and output sizes")
        if any(s < 1 for s in self.sizes):
            raise ValueError(f"layer sizes must be positive: {self.sizes}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def action_count(self) -> int:
        return self.sizes[-1]

    @property
    def param_count(self) -> int:
        return sum(
            n_in * n_out + n_out
            for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:])
        )


@dataclass
class Mlp:
    spec: LayerSpec
    activation: ActivationKind
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def param_count(self) -> int:
        return self.spec.param_count

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class QBatch:
    """Training batch: states, taken-action indices, and regression targets."""

    states: np.ndarray  # (n, input_dim)
    actions: np.ndarray  # (n,) int
    targets: np.ndarray  # (n,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ValueError("states must be a non-empty (n, input_dim) array")
        n = self.states.shape[0]
        if self.actions.shape != (n,) or self.targets.shape != (n,):
            raise ValueError("actions/targets must be length-n vectors")

    @property
    def n(self) -> int:
        return self.states.shape[0]


def init_network(spec: LayerSpec, activation: ActivationKind, seed: int) -> Mlp:
    """Fresh network: weights uniform in +-1/sqrt(n_in) per layer, biases zero.

    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(spec=spec, activation=activation, weights=weights, biases=biases)


def flatten(net: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(net: Mlp, v: np.ndarray) -> Mlp:
    """New Mlp with the same spec/activation and parameters taken from v."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (net.param_count,):
        raise ValueError(f"expected vector of length {net.param_count}, got {v.shape}")
    weights, biases, off = [], [], 0
    for n_in, n_out in zip(net.spec.sizes[:-1], net.spec.sizes[1:]):
        weights.append(v[off : off + n_in * n_out].reshape(n_in, n_out).copy())
        off += n_in * n_out
        biases.append(v[off : off + n_out].copy())
        off += n_out
    return Mlp(spec=net.spec, activation=net.activation, weights=weights, biases=biases)


def _check_states(net: Mlp, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if states.ndim != 2 or states.shape[1] != net.spec.input_dim:
        raise ValueError(
            f"states must be (n, {net.spec.input_dim}), got {states.shape}"
        )
    return states


def forward(net: Mlp, states: np.ndarray) -> np.ndarray:
    """Q-values, shape (n, action_count)."""
    a = _check_states(net, states)
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if l < last:
            a = np.tanh(a) if net.activation is ActivationKind.TANH else np.maximum(a, 0.0)
    return a


class Tape:
    """Linearization of the network at fixed parameters and states.

    Caches the forward activations and hidden-layer derivative masks so that
    repeated jvp/vjp applications (one pair per Krylov iteration) only pay
    for the tangent/adjoint sweeps.  Read-only with respect to the net.
    """

    def __init__(self, net: Mlp, states: np.ndarray):
        self.net = net
        states = _check_states(net, states)
        self.n = states.shape[0]
        last = net.n_layers - 1
        acts = [states]  # activations entering each layer
        dmasks = []  # d(activation)/d(preactivation) per hidden layer
        a = states
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            z = a @ w + b
            if l < last:
                if net.activation is ActivationKind.TANH:
                    a = np.tanh(z)
                    dmasks.append(1.0 - a * a)
                else:
                    a = np.maximum(z, 0.0)
                    # subgradient at the kink is 0
                    dmasks.append((z > 0.0).astype(np.float64))
                acts.append(a)
            else:
                a = z
        self.acts = acts
        self.dmasks = dmasks
        self.out = a

    def _split(self, v: np.ndarray):
        net = self.net
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (net.param_count,):
            raise ValueError(f"expected vector of length {net.param_count}")
        ws, bs, off = [], [], 0
        for n_in, n_out in zip(net.spec.sizes[:-1], net.spec.sizes[1:]):
            ws.append(v[off : off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            bs.append(v[off : off + n_out])
            off += n_out
        return ws, bs

    def jvp(self, v: np.ndarray) -> np.ndarray:
        """Directional derivative of forward() along parameter direction v."""
        net = self.net
        vw, vb = self._split(v)
        last = net.n_layers - 1
        t = None  # tangent of the layer input; None == zero (states are fixed)
        for l in range(net.n_layers):
            s = self.acts[l] @ vw[l] + vb[l]
            if t is not None:
                s += t @ net.weights[l]
            if l < last:
                s *= self.dmasks[l]
            t = s
        return t

    def vjp(self, u: np.ndarray) -> np.ndarray:
        """Adjoint product: sum over samples of J_i^T u_i, flat vector."""
        net = self.net
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.n, net.spec.action_count):
            raise ValueError(
                f"u must be ({self.n}, {net.spec.action_count}), got {u.shape}"
            )
        out = np.empty(net.param_count)
        offsets = []
        off = 0
        for n_in, n_out in zip(net.spec.sizes[:-1], net.spec.sizes[1:]):
            offsets.append((off, n_in, n_out))
            off += n_in * n_out + n_out
        delta = u
        for l in range(net.n_layers - 1, -1, -1):
            off, n_in, n_out = offsets[l]
            np.matmul(self.acts[l].T, delta, out=out[off : off + n_in * n_out].reshape(n_in, n_out))
            out[off + n_in * n_out : off + n_in * n_out + n_out] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ net.weights[l].T) * self.dmasks[l - 1]
        return out


def jvp(net: Mlp, states: np.ndarray, v: np.ndarray) -> np.ndarray:
    return Tape(net, states).jvp(v)


def vjp(net: Mlp, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    return Tape(net, states).vjp(u)


def loss(net: Mlp, batch: QBatch) -> float:
    """Mean squared error between targets and Q-values at the taken actions."""
    q = forward(net, batch.states)
    r = q[np.arange(batch.n), batch.actions] - batch.targets
    return float(np.mean(r * r))


def grad_loss(net: Mlp, batch: QBatch) -> np.ndarray:
    """Exact reverse-mode gradient of ``loss`` in flat coordinates."""
    tape = Tape(net, batch.states)
    q = tape.out
    u = np.zeros_like(q)
    idx = np.arange(batch.n)
    u[idx, batch.actions] = 2.0 / batch.n * (q[idx, batch.actions] - batch.targets)
    return tape.vjp(u)


# --- parameter snapshots -------------------------------------------------
#
# Text format, exact round-trip:
#   line 1: "ngdqn-params v1"
#   line 2: sizes as comma-separated ints
#   line 3: activation name ("tanh"/"relu")
#   line 4: seed (int, provenance only)
#   then one hex-float (float.hex) per parameter in flat layout order.

def save_params(net: Mlp, path, seed: int = 0) -> None:
    v = flatten(net)
    with open(path, "w") as fh:
        fh.write("ngdqn-params v1\n")
        fh.write(",".join(str(s) for s in net.spec.sizes) + "\n")
        fh.write(net.activation.value + "\n")
        fh.write(str(seed) + "\n")
        for x in v:
            fh.write(float(x).hex() + "\n")


def load_params(path) -> Mlp:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "ngdqn-params v1":
            raise ValueError(f"unrecognized snapshot header: {header!r}")
        sizes = tuple(int(s) for s in fh.readline().strip().split(","))
        activation = ActivationKind(fh.readline().strip())
        fh.readline()  # seed, informational
        vals = [float.fromhex(line.strip()) for line in fh if line.strip()]
    spec = LayerSpec(sizes)
    if len(vals) != spec.param_count:
        raise ValueError(
            f"snapshot has {len(vals)} values, spec needs {spec.param_count}"
        )
    zero = init_network(spec, activation, seed=0)
    return unflatten(zero, np.array(vals))
