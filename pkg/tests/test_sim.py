import warnings

import numpy as np
import pytest

from fdi_alloc.algorithms import AgentState, EsoConfig
from fdi_alloc.attacks import AttackSuite, Sinusoid, StateDependent, proportional
from fdi_alloc.graph import build_graph, line_graph
from fdi_alloc.problem import AllocationProblem, GeneralConvex, equilibrium_z, solve_kkt
from fdi_alloc.sim import (DivergenceError, SimConfig, compute_metrics, decay_fit, log_linear_fit, read_csv,
                           rk4_step, run_scenario, write_csv)
from cost_helpers import softplus_quadratic

WEAK = AttackSuite.uniform(4, Sinusoid(0.1, 2.0), Sinusoid(0.2, 2.0), Sinusoid(0.1, 2.0))
STRONG = AttackSuite.uniform(4, Sinusoid(2.0, 2.0), Sinusoid(1.5, 2.0), Sinusoid(1.0, 2.0))
UNEVEN = AttackSuite(tuple(Sinusoid(a, 2.0) for a in (0.3, -0.2, 0.5, 0.1)),
                     tuple(Sinusoid(a, 1.0, 0.4) for a in (0.2, 0.0, -0.3, 0.6)),
                     tuple(Sinusoid(a, 3.0) for a in (0.1, 0.4, 0.0, -0.2)))


def run(problem, graph, x0, mode="nominal", suite=None, eso=None, **sim):
    return run_scenario(problem, graph, suite, mode, eso, SimConfig(**sim), x0)


def exact_rk4_error(dt):
    y, t = 1.0, 0.0
    for _ in range(int(round(1.0 / dt))):
        y = rk4_step(lambda t, y: -y, np.array([y]), t, dt)[0]
        t += dt
    return abs(y - np.exp(-1.0))


def test_rk4_single_step():
    # one step of RK4 on y' = -y reproduces the 4th-order Taylor polynomial
    y = rk4_step(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-15)


@pytest.mark.parametrize("dt", [0.1, 0.05, 0.02])
def test_rk4_order(dt):
    ratio = exact_rk4_error(dt) / exact_rk4_error(dt / 2)
    assert 12.0 <= ratio <= 20.0


def test_rk4_time_argument():
    y = rk4_step(lambda t, y: np.array([t]), np.array([0.0]), 1.0, 0.5)
    assert y[0] == pytest.approx(0.5 * 1.0 + 0.125)


def test_rk4_flags_nonfinite():
    with pytest.raises(DivergenceError):
        rk4_step(lambda t, y: np.full_like(y, np.nan), np.array([1.0]), 0.0, 0.1)


def test_sim_config_validation():
    for bad in ({"dt": 0.0}, {"t_end": -1.0}, {"record_stride": 0}, {"tail_fraction": 0.0}, {"backend": "gpu"}):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    assert SimConfig(t_end=1.0, dt=0.3).n_steps == 3


@pytest.mark.parametrize("mode, suite", [("nominal", None), ("compromised", WEAK), ("compromised", UNEVEN)])
@pytest.mark.parametrize("backend", ["numba", "python"])
def test_sum_z_conserved(problem, line4, x0_state, mode, suite, backend):
    x0 = AgentState(x0_state.x, x0_state.lam, np.array([[1.0], [-2.0], [0.5], [3.0]]))
    tr = run(problem, line4, x0, mode, suite, t_end=20.0, dt=1e-3, record_stride=100, backend=backend)
    drift = np.abs(tr.z.sum(axis=1) - tr.z[0].sum(axis=0)).max()
    assert drift <= 1e-6


def test_sum_lambda_dynamics(problem, line4, x0_state):
    tr = run(problem, line4, x0_state, t_end=5.0, dt=1e-3, record_stride=1)
    s = tr.lam.sum(axis=(1, 2))
    fd = (s[2:] - s[:-2]) / (tr.times[2:] - tr.times[:-2])
    rhs = (tr.x - problem.demands).sum(axis=(1, 2))[1:-1]
    assert np.max(np.abs(fd - rhs)) <= 1e-3 * max(1.0, np.max(np.abs(rhs)))


def test_times_uniform_and_increasing(problem, line4, x0_state):
    tr = run(problem, line4, x0_state, t_end=1.0, dt=0.01, record_stride=7)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(1.0)
    assert tr.x.shape[0] == tr.lam.shape[0] == tr.z.shape[0] == tr.kappa.shape[0] == tr.times.size


@pytest.mark.parametrize("mode, suite, eso", [
    ("nominal", None, None),
    ("compromised", UNEVEN, None),
    ("resilient_linear", STRONG, EsoConfig(w0=20.0)),
    ("resilient_nonlinear", UNEVEN, EsoConfig(w0=20.0, variant="nonlinear")),
    ("resilient_linear", AttackSuite.uniform(4, Sinusoid(1.0, 2.0), Sinusoid(0.5, 1.0), neighbors_only=True),
     EsoConfig(w0=20.0, kappa_clamp=3.0)),
])
def test_backends_agree(problem, line4, x0_state, mode, suite, eso):
    kw = dict(t_end=2.0, dt=1e-3, record_stride=20)
    a = run(problem, line4, x0_state, mode, suite, eso, backend="numba", **kw)
    b = run(problem, line4, x0_state, mode, suite, eso, backend="python", **kw)
    assert (a.backend, b.backend) == ("numba", "python")
    np.testing.assert_array_equal(a.times, b.times)
    for u, v in ((a.x, b.x), (a.lam, b.lam), (a.z, b.z), (a.kappa, b.kappa)):
        np.testing.assert_allclose(u, v, atol=1e-9, rtol=0)
    if eso is not None:
        np.testing.assert_allclose(a.kappa_hat, b.kappa_hat, atol=1e-8, rtol=0)


def test_general_path_runs_in_python(x0_state):
    costs = tuple(GeneralConvex(softplus_quadratic, 2.0, 2.25) for _ in range(4))
    p = AllocationProblem(costs, np.array([[30.0], [40.0], [40.0], [35.0]]))
    suite = AttackSuite.uniform(4, StateDependent(proportional(0.5, "x"), 1.0))
    tr = run(p, line_graph(4), x0_state, "resilient_linear", suite, EsoConfig(w0=20.0), t_end=3.0, dt=1e-3,
             record_stride=50)
    assert tr.backend == "python" and not tr.diverged
    with pytest.raises(ValueError, match="numba"):
        run(p, line_graph(4), x0_state, "nominal", backend="numba", t_end=0.1)


def test_determinism(problem, line4, x0_state, tmp_path):
    for backend in ("numba", "python"):
        kw = dict(t_end=1.0, dt=1e-3, record_stride=10, backend=backend)
        a = run(problem, line4, x0_state, "resilient_nonlinear", STRONG, EsoConfig(variant="nonlinear"), **kw)
        b = run(problem, line4, x0_state, "resilient_nonlinear", STRONG, EsoConfig(variant="nonlinear"), **kw)
        write_csv(a, tmp_path / "a.csv")
        write_csv(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("backend", ["numba", "python"])
def test_divergence_returns_partial_trajectory(problem, line4, x0_state, backend):
    with pytest.warns(UserWarning, match="advisory observer step"):
        tr = run(problem, line4, x0_state, "resilient_linear", STRONG, EsoConfig(w0=50.0),
                 t_end=20.0, dt=0.1, record_stride=1, backend=backend)
    assert tr.diverged and 0 < tr.divergence_time < 20.0
    assert tr.times[-1] < tr.divergence_time
    assert np.all(np.isfinite(tr.x))


def test_no_warning_at_advised_step(problem, line4, x0_state):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run(problem, line4, x0_state, "resilient_linear", STRONG, EsoConfig(w0=50.0), t_end=0.1, dt=2e-4)


def test_run_validation(problem, x0_state):
    with pytest.raises(ValueError, match="connected"):
        run(problem, build_graph(4, [(0, 1, 1.0), (2, 3, 1.0)]), x0_state, t_end=0.1)
    with pytest.raises(ValueError, match="nodes"):
        run(problem, line_graph(3), x0_state, t_end=0.1)
    with pytest.raises(ValueError, match="mode"):
        run(problem, line_graph(4), x0_state, mode="bogus", t_end=0.1)
    with pytest.raises(ValueError, match="ESO"):
        run(problem, line_graph(4), x0_state, "resilient_linear", eso=EsoConfig(variant="nonlinear"), t_end=0.1)


def test_nominal_mode_ignores_attacks(problem, line4, x0_state):
    a = run(problem, line4, x0_state, "nominal", STRONG, t_end=1.0)
    b = run(problem, line4, x0_state, "nominal", None, t_end=1.0)
    np.testing.assert_array_equal(a.x, b.x)


def test_metrics_at_optimum(problem, line4):
    sol = solve_kkt(problem)
    star = AgentState(sol.x_star, np.tile(sol.lambda_star, (4, 1)), equilibrium_z(sol, problem, line4.laplacian))
    tr = run(problem, line4, star, t_end=2.0)
    m = compute_metrics(tr, sol, problem.demands)
    assert m.tail_sup("allocation_error") <= 1e-9
    assert m.tail_sup("feasibility") <= 1e-9
    assert m.tail_sup("multiplier_consensus") <= 1e-9
    assert m.overshoot == 0.0
    with pytest.raises(KeyError):
        m.series("observer_gamma_error")


def test_metric_definitions(problem, line4, x0_state):
    sol = solve_kkt(problem)
    tr = run(problem, line4, x0_state, "resilient_linear", STRONG, EsoConfig(w0=20.0), t_end=2.0, dt=1e-3)
    m = compute_metrics(tr, sol, problem.demands)
    k = 37
    assert m.allocation_error[k] == pytest.approx(np.linalg.norm(tr.x[k] - sol.x_star))
    assert m.feasibility[k] == pytest.approx(abs(tr.x[k].sum() - 145.0))
    lam = tr.lam[k, :, 0]
    assert m.multiplier_consensus[k] == pytest.approx(lam.max() - lam.min())
    g = np.concatenate([tr.x[k], tr.lam[k], tr.z[k]], axis=1)
    assert m.observer_gamma_error[k] == pytest.approx(np.linalg.norm(g - tr.gamma_hat[k], axis=1).max())
    for name in ("allocation_error", "feasibility", "multiplier_consensus",
                 "observer_gamma_error", "observer_kappa_error"):
        assert np.all(m.series(name) >= 0)
    # a longer window can only raise the supremum
    sups = [m.tail_sup("allocation_error", window=w) for w in (0.1, 0.5, 1.0, 2.0)]
    assert sups == sorted(sups)
    assert m.tail_sup("allocation_error", fraction=1.0) == pytest.approx(m.allocation_error.max())
    assert m.overshoot == pytest.approx(max(0.0, m.allocation_error.max() - m.allocation_error[0]))


def test_log_linear_fit_exact():
    t = np.linspace(0, 5, 50)
    slope, r2 = log_linear_fit(t, 3.0 * np.exp(-0.7 * t))
    assert slope == pytest.approx(-0.7) and r2 == pytest.approx(1.0)


def test_nominal_decay_fit(problem, line4, x0_state):
    tr = run(problem, line4, x0_state, t_end=20.0)
    slope, r2 = decay_fit(compute_metrics(tr, solve_kkt(problem)))
    assert slope < 0 and r2 >= 0.95


def test_csv_round_trip(problem, line4, x0_state, tmp_path):
    tr = run(problem, line4, x0_state, "resilient_linear", STRONG, EsoConfig(w0=20.0), t_end=0.5, dt=1e-3)
    write_csv(tr, tmp_path / "t.csv")
    cols = read_csv(tmp_path / "t.csv")
    assert list(cols) == ["t", "agent", "x", "lambda", "z", "gamma_err", "kappa_err"]
    np.testing.assert_array_equal(cols["x"].reshape(-1, 4), tr.x[:, :, 0])
    np.testing.assert_array_equal(cols["t"][::4], tr.times)


def test_csv_vector_decisions(tmp_path):
    from fdi_alloc.problem import Quadratic
    p = AllocationProblem((Quadratic(0, 1, 1), Quadratic(0, 2, 1)), np.array([[1.0, 2.0], [3.0, 4.0]]))
    g = line_graph(2)
    tr = run(p, g, AgentState.from_arrays(np.zeros((2, 2))), t_end=0.1)
    write_csv(tr, tmp_path / "v.csv")
    header = (tmp_path / "v.csv").read_text().splitlines()[0]
    assert header == "t,agent,x[0],x[1],lambda[0],lambda[1],z[0],z[1]"
