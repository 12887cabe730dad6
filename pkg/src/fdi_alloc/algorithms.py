"""Closed-loop dynamics: nominal, attacked, and ESO-compensated.

States are stacked per agent: ``x``, ``lam`` and ``z`` are arrays of shape
``(n_agents, n)``. Observer estimates of ``gamma_i = (x_i, lambda_i, z_i)``
and of the extended state ``kappa_i = (kappa_i1 + g_i, kappa_i2, kappa_i3)``
are ``(n_agents, 3n)`` arrays with the three blocks side by side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSuite, kappa_aggregates
from .graph import NetworkGraph
from .problem import AllocationProblem


@dataclass(frozen=True, eq=False)
class AgentState:
    x: np.ndarray
    lam: np.ndarray
    z: np.ndarray

    @classmethod
    def from_arrays(cls, x, lam=0.0, z=0.0) -> "AgentState":
        x = np.array(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(x, np.broadcast_to(np.asarray(lam, float), x.shape).copy(),
                   np.broadcast_to(np.asarray(z, float), x.shape).copy())

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.z], axis=1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.lam.ravel(), self.z.ravel()])

    @classmethod
    def unflat(cls, y: np.ndarray, n_agents: int, dim: int) -> "AgentState":
        p = n_agents * dim
        return cls(y[:p].reshape(n_agents, dim), y[p:2 * p].reshape(n_agents, dim),
                   y[2 * p:3 * p].reshape(n_agents, dim))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.lam)) and np.all(np.isfinite(self.z)))


@dataclass(frozen=True, eq=False)
class ObserverState:
    gamma_hat: np.ndarray
    kappa_hat: np.ndarray

    @classmethod
    def initial(cls, state: AgentState) -> "ObserverState":
        """Estimates start at the true local state with zero disturbance estimate."""
        g = state.gamma.copy()
        return cls(g, np.zeros_like(g))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.gamma_hat.ravel(), self.kappa_hat.ravel()])

    @classmethod
    def unflat(cls, y: np.ndarray, n_agents: int, dim: int) -> "ObserverState":
        p = 3 * n_agents * dim
        return cls(y[:p].reshape(n_agents, 3 * dim), y[p:2 * p].reshape(n_agents, 3 * dim))


def fal(e, alpha: float, delta: float):
    """Han's fal nonlinearity, componentwise.

    Linear with slope ``delta**(alpha - 1)`` inside ``|e| <= delta`` and
    ``|e|**alpha * sign(e)`` outside; the two pieces meet at ``delta**alpha``.
    """
    e = np.asarray(e, dtype=float)
    ae = np.abs(e)
    out = np.where(ae <= delta, e * delta ** (alpha - 1.0), ae**alpha * np.sign(e))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Identity:
    def __call__(self, e):
        return e


@dataclass(frozen=True)
class Fal:
    alpha: float = 0.125
    delta: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"fal alpha must lie in (0, 1), got {self.alpha}")
        if not self.delta > 0:
            raise ValueError(f"fal delta must be positive, got {self.delta}")

    def __call__(self, e):
        return fal(e, self.alpha, self.delta)


@dataclass(frozen=True)
class EsoConfig:
    """Extended-state observer gains.

    Linear variant: corrections ``a1 * w0 * e`` and ``a2 * w0**2 * e`` with
    (a1, a2) defaulting to (2, 1), i.e. a double pole at ``-w0``.
    Nonlinear variant: corrections ``a1 * h1(e)`` and ``a2 * h2(e)`` with
    (a1, a2) defaulting to (w0, w0**2) and h2 defaulting to ``Fal(0.125, 0.5)``.
    ``kappa_clamp`` optionally saturates the disturbance estimate fed back.
    """

    w0: float = 50.0
    variant: str = "linear"
    a1: float | None = None
    a2: float | None = None
    h1: Identity | Fal = field(default_factory=Identity)
    h2: Identity | Fal | None = None
    kappa_clamp: float | None = None

    def __post_init__(self):
        if self.variant not in ("linear", "nonlinear"):
            raise ValueError(f"unknown ESO variant {self.variant!r}")
        if not self.w0 > 0:
            raise ValueError(f"w0 must be positive, got {self.w0}")
        lin = self.variant == "linear"
        if self.a1 is None:
            object.__setattr__(self, "a1", 2.0 if lin else float(self.w0))
        if self.a2 is None:
            object.__setattr__(self, "a2", 1.0 if lin else float(self.w0) ** 2)
        if self.h2 is None:
            object.__setattr__(self, "h2", Identity() if lin else Fal(0.125, 0.5))
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("ESO gains a1, a2 must be positive (Hurwitz error dynamics)")
        if lin and not (isinstance(self.h1, Identity) and isinstance(self.h2, Identity)):
            raise ValueError("the linear ESO uses identity shaping; pick variant='nonlinear' for fal")
        if self.kappa_clamp is not None and not self.kappa_clamp > 0:
            raise ValueError("kappa_clamp must be positive when set")

    @property
    def gains(self) -> tuple[float, float]:
        """Net multipliers applied to h1(e) and h2(e)."""
        if self.variant == "linear":
            return self.a1 * self.w0, self.a2 * self.w0**2
        return self.a1, self.a2

    def max_stable_dt(self) -> float:
        """Advisory explicit-step bound 1/(10 * fastest observer rate)."""
        g1, g2 = self.gains
        return 1.0 / (10.0 * max(g1 * _max_slope(self.h1), np.sqrt(g2 * _max_slope(self.h2))))


def _max_slope(h) -> float:
    return h.delta ** (h.alpha - 1.0) if isinstance(h, Fal) else 1.0


def _base_terms(state: AgentState, p: AllocationProblem, g: NetworkGraph):
    lap = g.laplacian
    l_lam = lap @ state.lam
    return (
        -p.gradients(state.x) - state.lam,
        -l_lam - lap @ state.z + state.x - p.demands,
        l_lam,
    )


def nominal_rhs(state: AgentState, p: AllocationProblem, g: NetworkGraph) -> AgentState:
    """Attack-free closed loop with the drift cancelled by the controller."""
    dx, dl, dz = _base_terms(state, p, g)
    return AgentState(dx, dl, dz)


def compromised_rhs(state: AgentState, p: AllocationProblem, g: NetworkGraph,
                    suite: AttackSuite, t: float) -> AgentState:
    dx, dl, dz = _base_terms(state, p, g)
    k1, k2, k3 = kappa_aggregates(suite, g, t, (state.x, state.lam, state.z))
    return AgentState(dx + k1, dl + k2, dz + k3)


def extended_state(state: AgentState, p: AllocationProblem, g: NetworkGraph,
                   suite: AttackSuite, t: float) -> np.ndarray:
    """True kappa_i = (kappa_i1 + g_i(x_i), kappa_i2, kappa_i3), shape (N, 3n)."""
    k1, k2, k3 = kappa_aggregates(suite, g, t, (state.x, state.lam, state.z))
    return np.concatenate([k1 + p.drift(state.x), k2, k3], axis=1)


def observer_rhs(obs: ObserverState, gamma: np.ndarray, u_io: np.ndarray, cfg: EsoConfig) -> ObserverState:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != obs.gamma_hat.shape or np.shape(u_io) != gamma.shape:
        raise ValueError(f"observer expects blocks of shape {obs.gamma_hat.shape}")
    e = gamma - obs.gamma_hat
    g1, g2 = cfg.gains
    kh = _clamped(obs.kappa_hat, cfg)
    return ObserverState(kh + u_io + g1 * cfg.h1(e), g2 * cfg.h2(e))


def _clamped(kappa_hat: np.ndarray, cfg: EsoConfig) -> np.ndarray:
    if cfg.kappa_clamp is None:
        return kappa_hat
    return np.clip(kappa_hat, -cfg.kappa_clamp, cfg.kappa_clamp)


def resilient_rhs(state: AgentState, obs: ObserverState, p: AllocationProblem, g: NetworkGraph,
                  suite: AttackSuite, t: float, cfg: EsoConfig) -> tuple[AgentState, ObserverState]:
    """Plant under attack with the controller subtracting the observer's
    disturbance estimate; the drift is unknown to the controller."""
    n = p.decision_dim
    bx, bl, bz = _base_terms(state, p, g)
    k1, k2, k3 = kappa_aggregates(suite, g, t, (state.x, state.lam, state.z))
    kh = _clamped(obs.kappa_hat, cfg)
    kh1, kh2, kh3 = kh[:, :n], kh[:, n:2 * n], kh[:, 2 * n:]
    u_io = np.concatenate([bx - kh1, bl - kh2, bz - kh3], axis=1)
    d_state = AgentState(p.drift(state.x) + bx + k1 - kh1, bl + k2 - kh2, bz + k3 - kh3)
    return d_state, observer_rhs(obs, state.gamma, u_io, cfg)
