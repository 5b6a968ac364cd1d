"""Native implementations of three classic control tasks.

Dynamics, reset distributions, episode limits, and reward conventions follow
the standard v1 task definitions (cart-pole balance, acrobot swing-up,
pendulum swing-up) so returns are comparable to published numbers.  State is
kept in plain Python floats; episodes are deterministic given the reset seed
and the action sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import ActionSpace, Box, Discrete

__all__ = [
    "StepResult",
    "EnvSpec",
    "ENV_IDS",
    "env_spec",
    "make_env",
    "CartPole",
    "Acrobot",
    "Pendulum",
]


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    obs_dim: int
    action_space: ActionSpace
    max_episode_steps: int
    solved_threshold: float


class _EnvBase:
    spec: EnvSpec

    def __init__(self):
        self._steps = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._done = False
        return self._reset_state()

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        self._steps += 1
        obs, reward, terminated = self._step_state(action)
        truncated = self._steps >= self.spec.max_episode_steps
        if terminated or truncated:
            self._done = True
        return StepResult(obs, reward, terminated, truncated)

    def _reset_state(self) -> np.ndarray:
        raise NotImplementedError

    def _step_state(self, action):
        raise NotImplementedError


def _check_discrete(action, n: int) -> int:
    a = int(action)
    if a != action or not 0 <= a < n:
        raise ValueError(f"action must be an integer in [0, {n})")
    return a


class CartPole(_EnvBase):
    """Balance a pole on a force-controlled cart; +1 per step survived."""

    spec = EnvSpec("cartpole", 4, Discrete(2), 500, 475.0)

    GRAVITY = 9.8
    MASSCART = 1.0
    MASSPOLE = 0.1
    TOTAL_MASS = MASSCART + MASSPOLE
    LENGTH = 0.5                      # half the pole length
    POLEMASS_LENGTH = MASSPOLE * LENGTH
    FORCE_MAG = 10.0
    TAU = 0.02
    THETA_LIMIT = 12 * 2 * math.pi / 360
    X_LIMIT = 2.4

    def _reset_state(self) -> np.ndarray:
        x, x_dot, th, th_dot = self._rng.uniform(-0.05, 0.05, size=4)
        self._x, self._x_dot, self._th, self._th_dot = x, x_dot, th, th_dot
        return np.array([x, x_dot, th, th_dot])

    def _step_state(self, action):
        a = _check_discrete(action, 2)
        force = self.FORCE_MAG if a == 1 else -self.FORCE_MAG
        x, x_dot, th, th_dot = self._x, self._x_dot, self._th, self._th_dot

        costh = math.cos(th)
        sinth = math.sin(th)
        temp = (force + self.POLEMASS_LENGTH * th_dot * th_dot * sinth) / self.TOTAL_MASS
        th_acc = (self.GRAVITY * sinth - costh * temp) / (
            self.LENGTH * (4.0 / 3.0 - self.MASSPOLE * costh * costh / self.TOTAL_MASS))
        x_acc = temp - self.POLEMASS_LENGTH * th_acc * costh / self.TOTAL_MASS

        # semi-explicit Euler, positions advanced with the old velocities
        x = x + self.TAU * x_dot
        x_dot = x_dot + self.TAU * x_acc
        th = th + self.TAU * th_dot
        th_dot = th_dot + self.TAU * th_acc
        self._x, self._x_dot, self._th, self._th_dot = x, x_dot, th, th_dot

        terminated = (x < -self.X_LIMIT or x > self.X_LIMIT
                      or th < -self.THETA_LIMIT or th > self.THETA_LIMIT)
        return np.array([x, x_dot, th, th_dot]), 1.0, terminated


def _wrap(x: float, lo: float, hi: float) -> float:
    diff = hi - lo
    while x > hi:
        x -= diff
    while x < lo:
        x += diff
    return x


class Acrobot(_EnvBase):
    """Two-link underactuated swing-up; -1 per step until the tip is high."""

    spec = EnvSpec("acrobot", 6, Discrete(3), 500, -100.0)

    DT = 0.2
    LINK_LENGTH_1 = 1.0
    LINK_MASS_1 = 1.0
    LINK_MASS_2 = 1.0
    LINK_COM_1 = 0.5
    LINK_COM_2 = 0.5
    LINK_MOI = 1.0
    MAX_VEL_1 = 4 * math.pi
    MAX_VEL_2 = 9 * math.pi
    TORQUES = (-1.0, 0.0, 1.0)
    GRAVITY = 9.8

    def _reset_state(self) -> np.ndarray:
        self._s = list(self._rng.uniform(-0.1, 0.1, size=4))
        return self._obs()

    def _obs(self) -> np.ndarray:
        th1, th2, dth1, dth2 = self._s
        return np.array([math.cos(th1), math.sin(th1),
                         math.cos(th2), math.sin(th2), dth1, dth2])

    def _dsdt(self, s, torque):
        m1 = self.LINK_MASS_1
        m2 = self.LINK_MASS_2
        l1 = self.LINK_LENGTH_1
        lc1 = self.LINK_COM_1
        lc2 = self.LINK_COM_2
        i1 = i2 = self.LINK_MOI
        g = self.GRAVITY
        th1, th2, dth1, dth2 = s
        cos2 = math.cos(th2)
        sin2 = math.sin(th2)

        d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * cos2) + i1 + i2
        d2 = m2 * (lc2 * lc2 + l1 * lc2 * cos2) + i2
        phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2)
        phi1 = (-m2 * l1 * lc2 * dth2 * dth2 * sin2
                - 2 * m2 * l1 * lc2 * dth2 * dth1 * sin2
                + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2)
                + phi2)
        ddth2 = ((torque + d2 / d1 * phi1
                  - m2 * l1 * lc2 * dth1 * dth1 * sin2 - phi2)
                 / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1))
        ddth1 = -(d2 * ddth2 + phi1) / d1
        return (dth1, dth2, ddth1, ddth2)

    def _step_state(self, action):
        a = _check_discrete(action, 3)
        torque = self.TORQUES[a]
        s = self._s
        dt = self.DT

        # one classical Runge-Kutta step across the full control interval
        k1 = self._dsdt(s, torque)
        s1 = [s[i] + dt / 2 * k1[i] for i in range(4)]
        k2 = self._dsdt(s1, torque)
        s2 = [s[i] + dt / 2 * k2[i] for i in range(4)]
        k3 = self._dsdt(s2, torque)
        s3 = [s[i] + dt * k3[i] for i in range(4)]
        k4 = self._dsdt(s3, torque)
        ns = [s[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(4)]

        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = min(max(ns[2], -self.MAX_VEL_1), self.MAX_VEL_1)
        ns[3] = min(max(ns[3], -self.MAX_VEL_2), self.MAX_VEL_2)
        self._s = ns

        terminated = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        reward = 0.0 if terminated else -1.0
        return self._obs(), reward, terminated


def _angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(_EnvBase):
    """Torque-limited swing-up; cost penalizes angle, speed, and effort."""

    spec = EnvSpec("pendulum", 3, Box(np.array([-2.0]), np.array([2.0])), 200, -100.0)

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0

    def _reset_state(self) -> np.ndarray:
        self._th = self._rng.uniform(-math.pi, math.pi)
        self._thdot = self._rng.uniform(-1.0, 1.0)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self._th), math.sin(self._th), self._thdot])

    def _step_state(self, action):
        u = np.asarray(action, dtype=float).reshape(-1)
        if u.shape != (1,) or not math.isfinite(u[0]):
            raise ValueError("action must be a finite scalar torque")
        u = min(max(float(u[0]), -self.MAX_TORQUE), self.MAX_TORQUE)
        th, thdot = self._th, self._thdot
        g, m, length, dt = self.GRAVITY, self.MASS, self.LENGTH, self.DT

        cost = _angle_normalize(th) ** 2 + 0.1 * thdot * thdot + 0.001 * u * u
        newthdot = thdot + (3 * g / (2 * length) * math.sin(th)
                            + 3.0 / (m * length * length) * u) * dt
        newthdot = min(max(newthdot, -self.MAX_SPEED), self.MAX_SPEED)
        self._th = th + newthdot * dt
        self._thdot = newthdot
        return self._obs(), -cost, False


_ENV_CLASSES = {cls.spec.env_id: cls for cls in (CartPole, Acrobot, Pendulum)}
ENV_IDS = tuple(_ENV_CLASSES)


def env_spec(env_id: str) -> EnvSpec:
    try:
        return _ENV_CLASSES[env_id].spec
    except KeyError:
        raise ValueError(f"unknown environment: {env_id!r}") from None


def make_env(env_id: str) -> _EnvBase:
    return _ENV_CLASSES[env_id]() if env_id in _ENV_CLASSES else env_spec(env_id)
