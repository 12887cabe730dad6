"""Resource allocation problem: costs, demands, plant drift, KKT oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ProblemError(ValueError):
    pass


class KKTError(RuntimeError):
    pass


@dataclass(frozen=True)
class Quadratic:
    """f(x) = sum_k a + b x_k + c x_k^2 (coefficients broadcast over components)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ProblemError(f"quadratic cost needs c > 0 for strong convexity, got c={self.c}")

    @property
    def modulus(self) -> float:
        return 2.0 * self.c

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(self.a + self.b * x + self.c * x**2))

    def gradient(self, x) -> np.ndarray:
        return self.b + 2.0 * self.c * np.asarray(x, dtype=float)

    def inverse_gradient(self, mu) -> np.ndarray:
        return (np.asarray(mu, dtype=float) - self.b) / (2.0 * self.c)


@dataclass(frozen=True)
class GeneralConvex:
    """Cost known only through a user-declared gradient.

    ``modulus`` is the declared strong-convexity constant and ``lipschitz``
    the declared gradient Lipschitz constant. For decision dimension > 1 the
    gradient must be separable (component k depends on x_k only) for the
    KKT oracle to apply.
    """

    grad: Callable[[np.ndarray], np.ndarray]
    modulus: float
    lipschitz: float
    name: str = "general"

    def __post_init__(self):
        if not self.modulus > 0:
            raise ProblemError(f"declared strong-convexity modulus must be positive, got {self.modulus}")
        if self.lipschitz < self.modulus:
            raise ProblemError("declared Lipschitz constant is smaller than the convexity modulus")

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def inverse_gradient(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        out = np.empty_like(mu)
        for k, target in enumerate(mu):
            out[k] = _invert_component(self, k, mu.size, target)
        return out


CostFunction = Quadratic | GeneralConvex


def _invert_component(f: GeneralConvex, k: int, dim: int, target: float) -> float:
    # strong monotonicity gives |x - x0| <= |target - grad(x0)| / m around x0 = 0
    def gk(s):
        x = np.zeros(dim)
        x[k] = s
        return f.gradient(x)[k] - target

    g0 = gk(0.0)
    if g0 == 0.0:
        return 0.0
    radius = abs(g0) / f.modulus * (1.0 + 1e-9) + 1e-12
    lo, hi = (0.0, radius) if g0 < 0 else (-radius, 0.0)
    if gk(lo) > 0 or gk(hi) < 0:
        raise KKTError(f"gradient of {f.name} is not monotone on [{lo}, {hi}] (component {k})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gk(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def check_monotone(f: CostFunction, dim: int = 1, samples: int = 64, scale: float = 100.0, seed: int = 0) -> bool:
    """Sampled check of (grad f(x) - grad f(y))·(x - y) >= m |x - y|^2."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        x, y = rng.uniform(-scale, scale, size=(2, dim))
        lhs = float(np.dot(f.gradient(x) - f.gradient(y), x - y))
        if lhs < f.modulus * float(np.dot(x - y, x - y)) * (1 - 1e-9) - 1e-9:
            return False
    return True


# plant drift g_i, applied componentwise
DRIFTS: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "zero": lambda x, gain: np.zeros_like(x),
    "sin": lambda x, gain: gain * np.sin(x),
    "linear": lambda x, gain: gain * x,
}


@dataclass(frozen=True)
class Drift:
    kind: str = "sin"
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in DRIFTS:
            raise ProblemError(f"unknown drift kind {self.kind!r}; expected one of {sorted(DRIFTS)}")

    def __call__(self, x) -> np.ndarray:
        return DRIFTS[self.kind](np.asarray(x, dtype=float), self.gain)


@dataclass(frozen=True)
class AllocationProblem:
    """Minimise sum_i f_i(x_i) subject to sum_i x_i = sum_i d_i.

    ``demands`` has shape (n_agents, decision_dim). ``drift`` is the plant
    nonlinearity of every agent's first-order dynamics.
    """

    costs: tuple
    demands: np.ndarray
    drift: Drift = field(default_factory=Drift)

    def __post_init__(self):
        d = np.array(self.demands, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2 or d.shape[0] != len(self.costs):
            raise ProblemError(f"demands shape {d.shape} does not match {len(self.costs)} agents")
        if not np.all(np.isfinite(d)):
            raise ProblemError("demands must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "costs", tuple(self.costs))
        object.__setattr__(self, "demands", d)

    @property
    def n_agents(self) -> int:
        return len(self.costs)

    @property
    def decision_dim(self) -> int:
        return self.demands.shape[1]

    @property
    def all_quadratic(self) -> bool:
        return all(isinstance(f, Quadratic) for f in self.costs)

    def quadratic_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """(b, c) stacked as (n_agents, 1) columns for vectorised evaluation."""
        b = np.array([[f.b] for f in self.costs])
        c = np.array([[f.c] for f in self.costs])
        return b, c

    def gradients(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != self.demands.shape:
            raise ValueError(f"allocation shape {X.shape} != {self.demands.shape}")
        if self.all_quadratic:
            b, c = self.quadratic_coefficients()
            return b + 2.0 * c * X
        return np.stack([f.gradient(x) for f, x in zip(self.costs, X)])

    def total_cost(self, X) -> float:
        return sum(f.value(x) for f, x in zip(self.costs, np.asarray(X, dtype=float)))


def gradient(f: CostFunction, x) -> np.ndarray:
    return f.gradient(x)


@dataclass(frozen=True)
class KKTSolution:
    x_star: np.ndarray  # (n_agents, n)
    lambda_star: np.ndarray  # (n,)
    method: str

    @property
    def mu(self) -> np.ndarray:
        """Common marginal cost at the optimum (= -lambda*)."""
        return -self.lambda_star


def feasibility_residual(X, p: AllocationProblem) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != p.demands.shape:
        raise ValueError(f"allocation shape {X.shape} != {p.demands.shape}")
    return X.sum(axis=0) - p.demands.sum(axis=0)


def solve_kkt(
    p: AllocationProblem,
    method: str = "auto",
    bracket: tuple[float, float] = (-1e6, 1e6),
    tol: float = 1e-10,
) -> KKTSolution:
    """Exact primal-dual optimum of the allocation problem.

    All-quadratic problems use the closed form unless ``method="bisection"``;
    otherwise each component's marginal cost is found by bisection on the
    increasing map mu -> sum_i (grad f_i)^{-1}(mu).
    """
    if method not in ("auto", "closed_form", "bisection"):
        raise ValueError(f"unknown method {method!r}")
    total = p.demands.sum(axis=0)
    if method == "closed_form" and not p.all_quadratic:
        raise KKTError("closed form needs all-quadratic costs")
    if p.all_quadratic and method != "bisection":
        b, c = p.quadratic_coefficients()
        mu = (total + np.sum(b / (2 * c), axis=0)) / np.sum(1 / (2 * c), axis=0)
        x = (mu - b) / (2 * c)
        return KKTSolution(x, -mu, "closed_form")

    n = p.decision_dim
    mu = np.empty(n)
    for k in range(n):
        mu[k] = _bisect_multiplier(p, k, total[k], bracket, tol)
    x = np.stack([_inverse_grad(f, mu) for f in p.costs])
    return KKTSolution(x, -mu, "bisection")


def _inverse_grad(f: CostFunction, mu: np.ndarray) -> np.ndarray:
    return np.atleast_1d(f.inverse_gradient(mu))


def _bisect_multiplier(p, k, target, bracket, tol) -> float:
    n = p.decision_dim

    def excess(m):
        mu = np.zeros(n)
        mu[k] = m
        return sum(_inverse_grad(f, mu)[k] for f in p.costs) - target

    lo, hi = map(float, bracket)
    r_lo, r_hi = excess(lo), excess(hi)
    if not (r_lo <= 0 <= r_hi):
        raise KKTError(
            f"multiplier bracket [{lo:g}, {hi:g}] does not contain the optimum for component {k}: "
            f"feasibility excess {r_lo:.6g} at lower end, {r_hi:.6g} at upper end"
        )
    mid = 0.5 * (lo + hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = excess(mid)
        if abs(r) <= tol or mid in (lo, hi):
            break
        if r < 0:
            lo = mid
        else:
            hi = mid
    return mid


def equilibrium_z(sol: KKTSolution, p: AllocationProblem, laplacian: np.ndarray) -> np.ndarray:
    """One Z* making (X*, 1⊗lambda*, Z*) an equilibrium: least squares on L Z = X* - d."""
    rhs = sol.x_star - p.demands
    z, *_ = np.linalg.lstsq(laplacian, rhs, rcond=None)
    return z


def quadratic_problem(
    a: Sequence[float],
    b: Sequence[float],
    c: Sequence[float],
    demands,
    drift: Drift | None = None,
) -> AllocationProblem:
    costs = tuple(Quadratic(float(ai), float(bi), float(ci)) for ai, bi, ci in zip(a, b, c, strict=True))
    return AllocationProblem(costs, np.asarray(demands, dtype=float), drift or Drift())
