"""Native classic-control environments: CartPole (v0/v1) and Acrobot-v1.

Dynamics, constants, and episode rules follow the standard open-source
classic-control definitions: CartPole integrates the cart-pole ODEs with
explicit Euler at tau = 0.02 s; Acrobot integrates the two-link underactuated
pendulum with a single RK4 step of dt = 0.2 s per action, wrapping joint
angles to [-pi, pi] and clipping joint velocities.

Episodes distinguish ``terminal`` (failure or goal reached) from
``truncated`` (step limit); target computation treats only the former as an
absorbing state by default.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool  # failure / goal state reached
    truncated: bool  # step limit reached


class EnvKind(enum.Enum):
    CARTPOLE_V0 = "CartPole-v0"
    CARTPOLE_V1 = "CartPole-v1"
    ACROBOT_V1 = "Acrobot-v1"

    @property
    def obs_dim(self) -> int:
        return 6 if self is EnvKind.ACROBOT_V1 else 4

    @property
    def n_actions(self) -> int:
        return 3 if self is EnvKind.ACROBOT_V1 else 2

    @property
    def step_limit(self) -> int:
        return 200 if self is EnvKind.CARTPOLE_V0 else 500


class CartPole:
    """Pole balancing on a sliding cart; +1 reward per step survived."""

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5  # half the pole length
    FORCE_MAG = 10.0
    TAU = 0.02
    X_THRESHOLD = 2.4
    THETA_THRESHOLD = 12.0 * np.pi / 180.0

    def __init__(self, step_limit: int):
        self.step_limit = step_limit
        self.state = np.zeros(4)  # (x, x_dot, theta, theta_dot)
        self.steps = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        return self.state.copy()

    def step(self, action: int) -> StepResult:
        if action not in (0, 1):
            raise ValueError(f"invalid CartPole action {action}")
        x, x_dot, theta, theta_dot = self.state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        total_mass = self.MASS_CART + self.MASS_POLE
        polemass_length = self.MASS_POLE * self.HALF_LENGTH
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
        # explicit Euler, position first
        x += self.TAU * x_dot
        x_dot += self.TAU * x_acc
        theta += self.TAU * theta_dot
        theta_dot += self.TAU * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        self.steps += 1
        terminal = bool(
            abs(x) > self.X_THRESHOLD or abs(theta) > self.THETA_THRESHOLD
        )
        truncated = not terminal and self.steps >= self.step_limit
        return StepResult(self.state.copy(), 1.0, terminal, truncated)


class Acrobot:
    """Two-link underactuated pendulum; torque on the second joint only.

    Internal state is (theta1, theta2, omega1, omega2); the observation is
    (cos t1, sin t1, cos t2, sin t2, omega1, omega2).  Reward is -1 per step
    until the tip rises a link length above the pivot.
    """

    LINK_LENGTH_1 = 1.0
    LINK_MASS_1 = 1.0
    LINK_MASS_2 = 1.0
    LINK_COM_1 = 0.5
    LINK_COM_2 = 0.5
    LINK_MOI = 1.0
    GRAVITY = 9.8
    DT = 0.2
    MAX_VEL_1 = 4.0 * np.pi
    MAX_VEL_2 = 9.0 * np.pi
    TORQUES = (-1.0, 0.0, 1.0)
    STEP_LIMIT = 500

    def __init__(self, step_limit: int = STEP_LIMIT):
        self.step_limit = step_limit
        self.state = np.zeros(4)
        self.steps = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = rng.uniform(-0.1, 0.1, size=4)
        self.steps = 0
        return self._observation()

    def _observation(self) -> np.ndarray:
        t1, t2, w1, w2 = self.state
        return np.array([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), w1, w2])

    def _dsdt(self, s: np.ndarray, torque: float) -> np.ndarray:
        m1, m2 = self.LINK_MASS_1, self.LINK_MASS_2
        l1 = self.LINK_LENGTH_1
        lc1, lc2 = self.LINK_COM_1, self.LINK_COM_2
        i1 = i2 = self.LINK_MOI
        g = self.GRAVITY
        theta1, theta2, dtheta1, dtheta2 = s
        d1 = (
            m1 * lc1**2
            + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2))
            + i1
            + i2
        )
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - np.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - np.pi / 2.0)
            + phi2
        )
        ddtheta2 = (
            torque
            + d2 / d1 * phi1
            - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2)
            - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2])

    def step(self, action: int) -> StepResult:
        if action not in (0, 1, 2):
            raise ValueError(f"invalid Acrobot action {action}")
        torque = self.TORQUES[action]
        # one classic RK4 step of size DT
        s = self.state
        dt = self.DT
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(s + dt / 2.0 * k1, torque)
        k3 = self._dsdt(s + dt / 2.0 * k2, torque)
        k4 = self._dsdt(s + dt * k3, torque)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s[0] = _wrap_pi(s[0])
        s[1] = _wrap_pi(s[1])
        s[2] = np.clip(s[2], -self.MAX_VEL_1, self.MAX_VEL_1)
        s[3] = np.clip(s[3], -self.MAX_VEL_2, self.MAX_VEL_2)
        self.state = s
        self.steps += 1
        terminal = bool(-np.cos(s[0]) - np.cos(s[1] + s[0]) > 1.0)
        truncated = not terminal and self.steps >= self.step_limit
        reward = 0.0 if terminal else -1.0
        return StepResult(self._observation(), reward, terminal, truncated)

    def mechanical_energy(self) -> float:
        """Total kinetic + potential energy, consistent with the equations of
        motion used in ``step`` (mass-matrix form)."""
        m1, m2 = self.LINK_MASS_1, self.LINK_MASS_2
        l1 = self.LINK_LENGTH_1
        lc1, lc2 = self.LINK_COM_1, self.LINK_COM_2
        i1 = i2 = self.LINK_MOI
        g = self.GRAVITY
        t1, t2, w1, w2 = self.state
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(t2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(t2)) + i2
        kinetic = 0.5 * d1 * w1**2 + d2 * w1 * w2 + 0.5 * (m2 * lc2**2 + i2) * w2**2
        potential = -(m1 * lc1 + m2 * l1) * g * np.cos(t1) - m2 * lc2 * g * np.cos(t1 + t2)
        return float(kinetic + potential)


def _wrap_pi(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def make_env(kind: EnvKind):
    if kind is EnvKind.CARTPOLE_V0:
        return CartPole(step_limit=200)
    if kind is EnvKind.CARTPOLE_V1:
        return CartPole(step_limit=500)
    return Acrobot()
