"""Stochastic cart-pole plant with entropy-production and exergy diagnostics.

The equations of motion are implemented exactly as printed, including the
opposite signs of the cart damping/stiffness terms in the pendulum and cart
equations. Angles are radians internally; use :func:`deg2rad` at the
configuration boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

BLOWUP_BOUND = 1e6


class InvalidStateError(ValueError):
    """Raised for non-finite plant inputs."""


class DivergenceError(RuntimeError):
    """Raised when the integrated state exceeds the blow-up bound."""

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"plant state diverged at t={t:.6g} s")


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.54
    pole_friction: float = 0.4
    cart_damping: float = 0.1
    cart_stiffness: float = 5.0
    gravity: float = 9.8
    control_min: float = -0.5
    control_max: float = 5.0

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "half_length", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.control_min < self.control_max:
            raise ValueError("control_min must be below control_max")

    def clamp(self, u: float) -> float:
        return min(max(u, self.control_min), self.control_max)


@dataclass(frozen=True)
class CartPoleState:
    theta: float = 0.0
    theta_dot: float = 0.0
    z: float = 0.0
    z_dot: float = 0.0
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot, self.z, self.z_dot])

    @classmethod
    def from_degrees(cls, theta_deg: float, theta_dot: float = 0.0, z: float = 0.0,
                     z_dot: float = 0.0, t: float = 0.0) -> "CartPoleState":
        return cls(deg2rad(theta_deg), theta_dot, z, z_dot, t)


def deg2rad(x: float) -> float:
    return x * math.pi / 180.0


# initial condition used throughout the cart-pole benchmark: 10 deg, 0.1 rad/s
REFERENCE_INITIAL_STATE = CartPoleState.from_degrees(10.0, 0.1, 0.0, 0.0)


def _accel(theta, theta_dot, z, z_dot, force, p: CartPoleParams):
    total = p.cart_mass + p.pole_mass
    ml = p.pole_mass * p.half_length
    s, c = math.sin(theta), math.cos(theta)
    inner = (force + p.cart_damping * z_dot + p.cart_stiffness * z
             - ml * theta_dot * theta_dot * s) / total
    denom = p.half_length * (4.0 / 3.0 - p.pole_mass * c * c / total)
    theta_ddot = (p.gravity * s + c * inner - p.pole_friction * theta_dot) / denom
    z_ddot = (force - p.cart_damping * z_dot - p.cart_stiffness * z
              + ml * (theta_dot * theta_dot * s - theta_ddot * c)) / total
    return theta_ddot, z_ddot


def derivatives(state: CartPoleState, u: float, xi: float,
                params: CartPoleParams = CartPoleParams()) -> tuple[float, float]:
    """Return ``(theta_ddot, z_ddot)``; ``u`` must already be saturated."""
    vals = (state.theta, state.theta_dot, state.z, state.z_dot, u, xi)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidStateError(f"non-finite input to derivatives: {vals}")
    return _accel(state.theta, state.theta_dot, state.z, state.z_dot, u + xi, params)


def rhs(x: Sequence[float], force: float, params: CartPoleParams) -> tuple[float, ...]:
    """First-order form ``[theta, theta_dot, z, z_dot]' `` for a total cart force."""
    th_dd, z_dd = _accel(x[0], x[1], x[2], x[3], force, params)
    return (x[1], th_dd, x[3], z_dd)


def step(state: CartPoleState, u: float, xi: float, dt: float,
         params: CartPoleParams = CartPoleParams(),
         blowup: float = BLOWUP_BOUND) -> CartPoleState:
    """Advance one classical RK4 step with ``u`` and ``xi`` held over the step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x0 = (state.theta, state.theta_dot, state.z, state.z_dot)
    if not all(math.isfinite(v) for v in x0 + (u, xi)):
        raise InvalidStateError("non-finite state or force")
    f = u + xi
    k1 = rhs(x0, f, params)
    k2 = rhs([a + 0.5 * dt * b for a, b in zip(x0, k1)], f, params)
    k3 = rhs([a + 0.5 * dt * b for a, b in zip(x0, k2)], f, params)
    k4 = rhs([a + dt * b for a, b in zip(x0, k3)], f, params)
    x1 = [a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
          for a, b1, b2, b3, b4 in zip(x0, k1, k2, k3, k4)]
    t1 = state.t + dt
    if not all(math.isfinite(v) and abs(v) <= blowup for v in x1):
        raise DivergenceError(t1)
    return CartPoleState(x1[0], x1[1], x1[2], x1[3], t1)


def simulate_open_loop(state: CartPoleState, duration: float, dt: float = 0.01,
                       params: CartPoleParams = CartPoleParams(), u: float = 0.0) -> list[CartPoleState]:
    n = int(round(duration / dt))
    out = [state]
    for _ in range(n):
        state = step(state, u, 0.0, dt, params)
        out.append(state)
    return out


# --------------------------------------------------------------------------- noise

NOISE_KINDS = ("gaussian", "rayleigh", "uniform", "none")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise distribution and seed.

    Parameters are keyed by name: ``mean``/``sigma`` (gaussian), ``scale``
    (rayleigh), ``low``/``high`` (uniform).
    """

    kind: str = "none"
    mean: float = 0.0
    sigma: float = 1.0
    scale: float = 1.0
    low: float = -1.0
    high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or self.scale < 0:
            raise ValueError("noise sigma/scale must be non-negative")
        if self.low > self.high:
            raise ValueError("uniform noise needs low <= high")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=seed % 2 ** 64)

    def source(self) -> "NoiseSource":
        return NoiseSource(self)


@dataclass
class NoiseSource:
    """Deterministic draw stream for one :class:`NoiseSpec`.

    Uniforms come from numpy's Philox (counter-based, 64-bit keyed) generator;
    Gaussian draws use Box-Muller and Rayleigh draws use the inverse CDF, so
    the sequence only depends on Philox's documented output.
    """

    spec: NoiseSpec
    _gen: np.random.Generator = field(init=False, repr=False)
    _spare: float | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self._gen = np.random.Generator(np.random.Philox(self.spec.seed))

    def _uniform(self) -> float:
        return float(self._gen.random())

    def sample(self) -> float:
        s = self.spec
        if s.kind == "none":
            return 0.0
        if s.kind == "uniform":
            return s.low + (s.high - s.low) * self._uniform()
        if s.kind == "rayleigh":
            return s.scale * math.sqrt(-2.0 * math.log1p(-self._uniform()))
        # gaussian: Box-Muller, second variate cached
        if self._spare is not None:
            z, self._spare = self._spare, None
        else:
            u1 = 1.0 - self._uniform()  # (0, 1]
            u2 = self._uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._spare = r * math.sin(2.0 * math.pi * u2)
        return s.mean + s.sigma * z


def sample_noise(source: NoiseSource) -> float:
    return source.sample()


# ------------------------------------------------------------------ diagnostics

@dataclass(frozen=True)
class EntropyRates:
    dS_theta: float
    dS_z: float
    dS_u: float


def entropy_rates(state: CartPoleState, e_dot: float, k_d: float,
                  params: CartPoleParams = CartPoleParams()) -> EntropyRates:
    p = params
    total = p.cart_mass + p.pole_mass
    th, thd = state.theta, state.theta_dot
    num = p.pole_friction * thd ** 2 + p.pole_mass * p.half_length * thd ** 3 * math.sin(2 * th) / total
    den = p.half_length * (4.0 / 3.0 - p.pole_mass * math.cos(th) ** 2 / total)
    return EntropyRates(num / den, p.cart_damping * state.z_dot ** 2, k_d * e_dot ** 2)


@dataclass(frozen=True)
class ExergyBalance:
    W_dot: float
    T0_Si_dot: float
    V_dot: float

    def __iter__(self):
        return iter((self.W_dot, self.T0_Si_dot, self.V_dot))


def exergy_balance(forces: Sequence[float], velocities: Sequence[float],
                   dissipative: Sequence[bool], T0: float = 1.0) -> ExergyBalance:
    """Split ``sum Q_k qdot_k`` into generation and dissipation.

    Entries flagged dissipative form ``T0 * S_i_dot``; the rest form ``W_dot``.
    Returns ``V_dot = W_dot - T0 * S_i_dot``.
    """
    if not (len(forces) == len(velocities) == len(dissipative)):
        raise ValueError("forces, velocities and partition flags must have equal length")
    if not T0 > 0:
        raise ValueError("T0 must be positive")
    w = sum(q * v for q, v, d in zip(forces, velocities, dissipative) if not d)
    s_i = sum(q * v for q, v, d in zip(forces, velocities, dissipative) if d) / T0
    return ExergyBalance(float(w), float(T0 * s_i), float(w - T0 * s_i))
