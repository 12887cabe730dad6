"""Deterministic fixed-step integration, trajectories and run metrics."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algorithms import (AgentState, EsoConfig, Fal, ObserverState, compromised_rhs,
                         extended_state, nominal_rhs, resilient_rhs)
from .attacks import AttackSuite, sinusoid_tables
from .graph import NetworkGraph, is_connected
from .problem import AllocationProblem, KKTSolution

log = logging.getLogger(__name__)

MODES = ("nominal", "compromised", "resilient_linear", "resilient_nonlinear")


class DivergenceError(RuntimeError):
    def __init__(self, t: float, index: int, message: str = "non-finite derivative"):
        super().__init__(f"{message} at t={t:g}, state component {index}")
        self.t = t
        self.index = index


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 20.0
    dt: float = 1e-3
    record_stride: int = 10
    divergence_threshold: float = 1e9
    tail_fraction: float = 0.25
    backend: str = "auto"

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")
        if self.backend not in ("auto", "python", "numba"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray], y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical four-stage Runge-Kutta update."""
    h = 0.5 * dt
    k1 = _checked(rhs(t, y), t)
    k2 = _checked(rhs(t + h, y + h * k1), t + h)
    k3 = _checked(rhs(t + h, y + h * k2), t + h)
    k4 = _checked(rhs(t + dt, y + dt * k3), t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked(k: np.ndarray, t: float) -> np.ndarray:
    finite = np.isfinite(k)
    if not finite.all():
        raise DivergenceError(t, int(np.argmin(finite)))
    return k


@dataclass(eq=False)
class Trajectory:
    """Sampled run. Arrays are indexed (sample, agent, component)."""

    mode: str
    times: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    kappa: np.ndarray
    gamma_hat: np.ndarray | None = None
    kappa_hat: np.ndarray | None = None
    diverged: bool = False
    divergence_time: float | None = None
    backend: str = "python"

    @property
    def has_observer(self) -> bool:
        return self.gamma_hat is not None

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.z], axis=2)

    def state_at(self, k: int) -> AgentState:
        return AgentState(self.x[k], self.lam[k], self.z[k])

    def final_state(self) -> AgentState:
        return self.state_at(-1)


def _resolve_eso(mode: str, eso: EsoConfig | None) -> EsoConfig | None:
    if not mode.startswith("resilient"):
        return None
    variant = mode.split("_", 1)[1]
    if eso is None:
        return EsoConfig(variant=variant)
    if eso.variant != variant:
        raise ValueError(f"mode {mode!r} needs a {variant} ESO, got {eso.variant!r}")
    return eso


def numba_supported(problem: AllocationProblem, suite: AttackSuite) -> bool:
    return problem.all_quadratic and sinusoid_tables(suite) is not None


def run_scenario(
    problem: AllocationProblem,
    graph: NetworkGraph,
    suite: AttackSuite | None,
    mode: str,
    eso_cfg: EsoConfig | None,
    sim_cfg: SimConfig,
    initial: AgentState,
) -> Trajectory:
    """Integrate one closed loop from t = 0 to ``sim_cfg.t_end``.

    Divergence (non-finite or above the threshold) ends the run early; the
    samples recorded so far are returned with ``diverged`` set.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not is_connected(graph):
        raise ValueError("communication graph is not connected")
    if graph.n_agents != problem.n_agents:
        raise ValueError(f"graph has {graph.n_agents} nodes but problem has {problem.n_agents} agents")
    if initial.x.shape != problem.demands.shape:
        raise ValueError(f"initial state shape {initial.x.shape} != {problem.demands.shape}")
    suite = suite or AttackSuite.zeros(problem.n_agents)
    if suite.n_agents != problem.n_agents:
        raise ValueError("attack suite size does not match the number of agents")
    if mode == "nominal":
        suite = AttackSuite.zeros(problem.n_agents)
    eso = _resolve_eso(mode, eso_cfg)
    if eso is not None and sim_cfg.dt > eso.max_stable_dt():
        warnings.warn(
            f"dt={sim_cfg.dt:g} exceeds the advisory observer step {eso.max_stable_dt():.3g}; "
            "explicit integration of the observer may be inaccurate or unstable",
            stacklevel=2,
        )

    backend = sim_cfg.backend
    if backend == "auto":
        backend = "numba" if numba_supported(problem, suite) else "python"
    elif backend == "numba" and not numba_supported(problem, suite):
        raise ValueError("numba backend needs quadratic costs and Zero/Sinusoid attacks")

    y0 = initial.flat()
    if eso is not None:
        y0 = np.concatenate([y0, ObserverState.initial(initial).flat()])

    if backend == "numba":
        samples, steps, fail = _integrate_numba(problem, graph, suite, mode, eso, sim_cfg, y0)
    else:
        samples, steps, fail = _integrate_python(problem, graph, suite, mode, eso, sim_cfg, y0)
    return _assemble(problem, graph, suite, mode, sim_cfg, samples, steps, fail, backend, eso is not None)


def _flat_rhs(problem, graph, suite, mode, eso):
    N, n = problem.n_agents, problem.decision_dim
    p = 3 * N * n
    if mode == "nominal":
        return lambda t, y: nominal_rhs(AgentState.unflat(y, N, n), problem, graph).flat()
    if mode == "compromised":
        return lambda t, y: compromised_rhs(AgentState.unflat(y, N, n), problem, graph, suite, t).flat()

    def rhs(t, y):
        ds, do = resilient_rhs(AgentState.unflat(y[:p], N, n), ObserverState.unflat(y[p:], N, n),
                               problem, graph, suite, t, eso)
        return np.concatenate([ds.flat(), do.flat()])

    return rhs


def _integrate_python(problem, graph, suite, mode, eso, cfg, y0):
    rhs = _flat_rhs(problem, graph, suite, mode, eso)
    n_steps, stride, dt = cfg.n_steps, int(cfg.record_stride), cfg.dt
    y = y0.copy()
    samples = [y.copy()]
    steps = [0]
    for step in range(n_steps):
        try:
            y = rk4_step(rhs, y, step * dt, dt)
        except DivergenceError as err:
            log.warning("run diverged: %s", err)
            return samples, steps, step
        if not np.all(np.abs(y) <= cfg.divergence_threshold):
            return samples, steps, step
        if (step + 1) % stride == 0 or step + 1 == n_steps:
            samples.append(y.copy())
            steps.append(step + 1)
    return samples, steps, None


def _integrate_numba(problem, graph, suite, mode, eso, cfg, y0):
    from . import _kernel

    n_steps, stride = cfg.n_steps, int(cfg.record_stride)
    n_rec = n_steps // stride + 2
    records = np.empty((n_rec, y0.size))
    b, c = problem.quadratic_coefficients()
    amp, freq, phase = sinusoid_tables(suite)
    if eso is None:
        g1 = g2 = 0.0
        h1 = h2 = (0, 0.0, 1.0)
        clamp = np.inf
    else:
        g1, g2 = eso.gains
        h1, h2 = _shape_code(eso.h1), _shape_code(eso.h2)
        clamp = np.inf if eso.kappa_clamp is None else float(eso.kappa_clamp)
    written, fail = _kernel.integrate(
        y0, records, _kernel.MODE_CODES[mode], problem.n_agents, problem.decision_dim,
        np.ascontiguousarray(graph.laplacian), np.ascontiguousarray(suite.aggregation_matrix(graph)),
        b[:, 0].copy(), c[:, 0].copy(), np.ascontiguousarray(problem.demands),
        _kernel.DRIFT_CODES[problem.drift.kind], float(problem.drift.gain),
        amp, freq, phase, float(g1), float(g2), *h1, *h2, clamp,
        float(cfg.dt), n_steps, stride, float(cfg.divergence_threshold),
    )
    last = n_steps if fail < 0 else fail
    steps = [0] + [s for s in range(stride, last + 1, stride)]
    if fail < 0 and steps[-1] != n_steps:
        steps.append(n_steps)
    steps = steps[:written]
    return list(records[:written]), steps, (None if fail < 0 else int(fail))


def _shape_code(h) -> tuple[int, float, float]:
    if isinstance(h, Fal):
        return 1, float(h.alpha), float(h.delta)
    return 0, 0.0, 1.0


def _assemble(problem, graph, suite, mode, cfg, samples, steps, fail, backend, with_obs) -> Trajectory:
    N, n = problem.n_agents, problem.decision_dim
    p = N * n
    Y = np.asarray(samples)
    K = Y.shape[0]
    times = np.asarray(steps, dtype=float) * cfg.dt
    x = Y[:, :p].reshape(K, N, n)
    lam = Y[:, p:2 * p].reshape(K, N, n)
    z = Y[:, 2 * p:3 * p].reshape(K, N, n)
    kappa = np.stack([extended_state(AgentState(x[k], lam[k], z[k]), problem, graph, suite, times[k])
                      for k in range(K)])
    gh = kh = None
    if with_obs:
        gh = Y[:, 3 * p:6 * p].reshape(K, N, 3 * n)
        kh = Y[:, 6 * p:9 * p].reshape(K, N, 3 * n)
    return Trajectory(
        mode, times, x, lam, z, kappa, gh, kh,
        diverged=fail is not None,
        divergence_time=None if fail is None else (fail + 1) * cfg.dt,
        backend=backend,
    )


@dataclass(eq=False)
class RunMetrics:
    times: np.ndarray
    allocation_error: np.ndarray
    feasibility: np.ndarray
    multiplier_consensus: np.ndarray
    observer_gamma_error: np.ndarray | None = None
    observer_kappa_error: np.ndarray | None = None
    tail_fraction: float = 0.25
    diverged: bool = False
    divergence_time: float | None = None
    extras: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        s = getattr(self, name)
        if s is None:
            raise KeyError(f"metric {name!r} not available for this run")
        return s

    def tail_sup(self, name: str, fraction: float | None = None, window: float | None = None) -> float:
        """Supremum of a metric over the last ``window`` time units (or
        ``fraction`` of the horizon)."""
        t = self.times
        if window is None:
            window = (self.tail_fraction if fraction is None else fraction) * t[-1]
        mask = t >= t[-1] - window - 1e-12
        return float(np.max(self.series(name)[mask]))

    @property
    def overshoot(self) -> float:
        e = self.allocation_error
        return float(max(0.0, e.max() - e[0]))

    def summary(self) -> dict:
        out = {
            "diverged": self.diverged,
            "divergence_time": self.divergence_time,
            "t_final": float(self.times[-1]),
            "tail_fraction": self.tail_fraction,
            "overshoot": self.overshoot,
            "final": {},
            "tail_sup": {},
        }
        for name in ("allocation_error", "feasibility", "multiplier_consensus",
                     "observer_gamma_error", "observer_kappa_error"):
            s = getattr(self, name)
            if s is None:
                continue
            out["final"][name] = float(s[-1])
            out["tail_sup"][name] = self.tail_sup(name)
        out.update(self.extras)
        return out


def compute_metrics(traj: Trajectory, oracle: KKTSolution, demands: np.ndarray | None = None,
                    tail_fraction: float = 0.25) -> RunMetrics:
    """Error series against the KKT optimum.

    ``demands`` (n_agents, n) enables the feasibility series; without it the
    total demand is taken from the oracle allocation (equal by feasibility).
    """
    K = traj.times.size
    alloc = np.linalg.norm((traj.x - oracle.x_star).reshape(K, -1), axis=1)
    total = (oracle.x_star if demands is None else demands).sum(axis=0)
    feas = np.linalg.norm(traj.x.sum(axis=1) - total, axis=1)
    diff = traj.lam[:, :, None, :] - traj.lam[:, None, :, :]
    cons = np.linalg.norm(diff, axis=3).max(axis=(1, 2))
    ge = ke = None
    if traj.has_observer:
        ge = np.linalg.norm(traj.gamma - traj.gamma_hat, axis=2).max(axis=1)
        ke = np.linalg.norm(traj.kappa - traj.kappa_hat, axis=2).max(axis=1)
    return RunMetrics(traj.times, alloc, feas, cons, ge, ke, tail_fraction,
                      traj.diverged, traj.divergence_time)


def log_linear_fit(times: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of log(values) against time: (slope, R^2)."""
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(times, y, 1)
    resid = y - (slope * times + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def decay_fit(metrics: RunMetrics) -> tuple[float, float]:
    """Exponential-rate fit of the allocation error from its peak to the end."""
    e = metrics.allocation_error
    k = int(np.argmax(e))
    return log_linear_fit(metrics.times[k:], e[k:])


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(traj: Trajectory, path) -> None:
    """Long-format export: one row per agent per recorded sample."""
    K, N, n = traj.x.shape

    def cols(name):
        return [name] if n == 1 else [f"{name}[{k}]" for k in range(n)]

    header = ["t", "agent"] + cols("x") + cols("lambda") + cols("z")
    if traj.has_observer:
        header += ["gamma_err", "kappa_err"]
        ge = np.linalg.norm(traj.gamma - traj.gamma_hat, axis=2)
        ke = np.linalg.norm(traj.kappa - traj.kappa_hat, axis=2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(K):
            t = _fmt(traj.times[k])
            for i in range(N):
                row = [t, i]
                row += [_fmt(v) for v in traj.x[k, i]]
                row += [_fmt(v) for v in traj.lam[k, i]]
                row += [_fmt(v) for v in traj.z[k, i]]
                if traj.has_observer:
                    row += [_fmt(ge[k, i]), _fmt(ke[k, i])]
                w.writerow(row)


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of an exported trajectory as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, j] for j, name in enumerate(header)}
