"""False-data-injection signals and their lumped channel disturbances.

Each agent carries three attack channels: the actuator (added to the
control input), and sensor attacks on the multiplier and auxiliary values
it reads. Sensor attacks only reach the dynamics through relative terms,
so they are aggregated with the Laplacian before entering the ``lambda``
and ``z`` equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .graph import NetworkGraph

CHANNELS = ("actuator", "lambda", "z")


class AttackError(ValueError):
    pass


class AttackSignal:
    """Base class: a bounded map ``(t, local_state) -> vector``."""

    #: signals depending only on time can be tabulated or compiled
    time_only = True

    def __call__(self, t: float, local_state=None, dim: int = 1) -> np.ndarray:
        raise NotImplementedError

    def bound(self, dim: int = 1) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(AttackSignal):
    def __call__(self, t, local_state=None, dim=1):
        return np.zeros(dim)

    def bound(self, dim=1):
        return 0.0


@dataclass(frozen=True)
class Sinusoid(AttackSignal):
    """amplitude * cos(frequency * t + phase), same on every component."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __call__(self, t, local_state=None, dim=1):
        return np.full(dim, self.amplitude * np.cos(self.frequency * t + self.phase))

    def bound(self, dim=1):
        return abs(self.amplitude) * np.sqrt(dim)


@dataclass(frozen=True, eq=False)
class Exosystem(AttackSignal):
    """Output ``C w(t)`` of the autonomous system ``w' = S w``.

    S must be diagonalisable with eigenvalues on the imaginary axis, so the
    output is a bounded sum of harmonics.
    """

    S: np.ndarray
    C: np.ndarray
    w0: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        w0 = np.asarray(self.w0, dtype=float).ravel()
        if S.shape[0] != S.shape[1] or S.shape[0] != w0.size or C.shape[1] != w0.size:
            raise AttackError(f"exosystem shapes inconsistent: S {S.shape}, C {C.shape}, w0 {w0.shape}")
        evals, evecs = np.linalg.eig(S)
        if np.max(np.abs(evals.real)) > 1e-9:
            raise AttackError(f"exosystem matrix has eigenvalues off the imaginary axis: {evals}")
        if np.linalg.cond(evecs) > 1e8:
            raise AttackError("exosystem matrix is not diagonalisable; output would grow polynomially")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "w0", w0)
        coords = np.linalg.solve(evecs, w0)
        object.__setattr__(self, "_bound", float(np.sum(np.linalg.norm(C @ evecs, axis=0) * np.abs(coords))))

    def __call__(self, t, local_state=None, dim=1):
        y = self.C @ (expm(self.S * t) @ self.w0)
        if y.size != dim:
            raise AttackError(f"exosystem output has dimension {y.size}, expected {dim}")
        return y

    def bound(self, dim=1):
        return self._bound


def _saturate(v: np.ndarray, s_max: float) -> np.ndarray:
    r = float(np.linalg.norm(v))
    if r == 0.0:
        return v
    return v * (s_max * np.tanh(r / s_max) / r)


@dataclass(frozen=True)
class StateDependent(AttackSignal):
    """Attack shaped by the victim's own state, smoothly saturated below ``s_max``.

    ``fn(t, (x_i, lambda_i, z_i))`` returns the raw injection; the default
    built from config is ``gain * source`` where source is one of the local
    state blocks.
    """

    fn: Callable[[float, tuple], np.ndarray]
    s_max: float
    label: str = "state_dependent"
    time_only = False

    def __post_init__(self):
        if not self.s_max > 0:
            raise AttackError("state-dependent attack needs s_max > 0")

    def __call__(self, t, local_state=None, dim=1):
        if local_state is None:
            local_state = (np.zeros(dim),) * 3
        raw = np.asarray(self.fn(t, local_state), dtype=float).reshape(dim)
        return _saturate(raw, self.s_max)

    def bound(self, dim=1):
        return self.s_max


def proportional(gain: float, source: str) -> Callable:
    idx = {"x": 0, "lambda": 1, "z": 2}[source]
    return lambda t, s: gain * np.asarray(s[idx], dtype=float)


def eval_attack(s: AttackSignal, t: float, state=None, dim: int = 1) -> np.ndarray:
    return s(t, state, dim)


@dataclass(frozen=True)
class AttackSuite:
    """Per-agent actuator, multiplier-sensor and auxiliary-sensor signals.

    With ``neighbors_only`` the agent's own reading is treated as clean in the
    aggregates; by default it is attacked like every other reading.
    """

    actuator: tuple
    lam: tuple
    z: tuple
    neighbors_only: bool = False

    def __post_init__(self):
        n = len(self.actuator)
        if not (len(self.lam) == len(self.z) == n):
            raise AttackError("attack channels must list one signal per agent")

    @classmethod
    def zeros(cls, n_agents: int) -> "AttackSuite":
        return cls.uniform(n_agents)

    @classmethod
    def uniform(cls, n_agents, actuator=None, lam=None, z=None, neighbors_only=False) -> "AttackSuite":
        def rep(s):
            return (s or Zero(),) * n_agents

        return cls(rep(actuator), rep(lam), rep(z), neighbors_only)

    @property
    def n_agents(self) -> int:
        return len(self.actuator)

    @property
    def signals(self) -> tuple:
        return self.actuator + self.lam + self.z

    @property
    def time_only(self) -> bool:
        return all(s.time_only for s in self.signals)

    @cached_property
    def _tables(self):
        return sinusoid_tables(self)

    def aggregation_matrix(self, g: NetworkGraph) -> np.ndarray:
        """Matrix M with kappa_3 = M lambda^a and kappa_2 = -M (lambda^a + z^a)."""
        return -g.adjacency if self.neighbors_only else g.laplacian

    def values(self, t: float, states=None, dim: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Raw signals (u^a, lambda^a, z^a), each (n_agents, dim)."""
        tables = self._tables
        if tables is not None:
            amp, freq, phase = tables
            v = np.repeat((amp * np.cos(freq * t + phase))[:, :, None], dim, axis=2)
            return v[0], v[1], v[2]
        out = []
        for channel in (self.actuator, self.lam, self.z):
            rows = []
            for i, s in enumerate(channel):
                local = None if states is None else (states[0][i], states[1][i], states[2][i])
                v = np.asarray(s(t, local, dim), dtype=float)
                if v.shape != (dim,):
                    raise AttackError(f"signal {s!r} returned shape {v.shape}, expected ({dim},)")
                rows.append(v)
            out.append(np.stack(rows))
        return out[0], out[1], out[2]


def kappa_aggregates(suite: AttackSuite, g: NetworkGraph, t: float, states=None, dim: int = 1):
    """Lumped disturbances (kappa_1, kappa_2, kappa_3), each (n_agents, dim).

    ``states`` is ``(X, Lambda, Z)`` stacked per agent; required only by
    state-dependent signals.
    """
    if states is not None:
        dim = np.asarray(states[0]).shape[-1]
    ua, la, za = suite.values(t, states, dim)
    m = suite.aggregation_matrix(g)
    k3 = m @ la
    k2 = -k3 - m @ za
    return ua, k2, k3


def sinusoid_tables(suite: AttackSuite) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """(amplitude, frequency, phase) arrays of shape (3, n_agents) when every
    signal is Zero or Sinusoid; ``None`` otherwise."""
    amp = np.zeros((3, suite.n_agents))
    freq = np.zeros_like(amp)
    phase = np.zeros_like(amp)
    for c, channel in enumerate((suite.actuator, suite.lam, suite.z)):
        for i, s in enumerate(channel):
            if isinstance(s, Zero):
                continue
            if not isinstance(s, Sinusoid):
                return None
            amp[c, i], freq[c, i], phase[c, i] = s.amplitude, s.frequency, s.phase
    return amp, freq, phase
