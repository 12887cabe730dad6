"""Scenario configuration: YAML loading, presets, validation, canonical echo.

A config is a mapping with blocks ``problem``, ``graph``, ``attacks``,
``mode``, ``eso``, ``sim``, ``initial`` and optional ``name``/``output``.
``preset: <name>`` pulls in a preset whose values the remaining keys
override. Loading validates everything up front and produces a canonical
dict (defaults filled, preset expanded); dumping that dict and loading it
again gives the same scenario.
"""
from __future__ import annotations

import copy
import importlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .algorithms import AgentState, EsoConfig, Fal, Identity
from .attacks import (AttackSuite, Exosystem, Sinusoid, StateDependent, Zero,
                      proportional)
from .graph import GraphError, NetworkGraph, build_graph, is_connected
from .problem import (AllocationProblem, Drift, GeneralConvex, ProblemError,
                      Quadratic, check_monotone)
from .sim import MODES, SimConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_EXAMPLE_PROBLEM = {
    "costs": [
        {"kind": "quadratic", "a": 0.5, "b": 3.0, "c": 2.0},
        {"kind": "quadratic", "a": 1.5, "b": 4.0, "c": 1.0},
        {"kind": "quadratic", "a": 3.0, "b": 5.0, "c": 0.5},
        {"kind": "quadratic", "a": 1.0, "b": 2.0, "c": 1.5},
    ],
    "demands": [30.0, 40.0, 40.0, 35.0],
    "drift": {"kind": "sin", "gain": 1.0},
}
_LINE4 = {"n": 4, "edges": [[0, 1, 1.0], [1, 2, 1.0], [2, 3, 1.0]]}
_X0 = {"x": [40.0, 35.0, 45.0, 40.0], "lambda": 0.0, "z": 0.0}


def _cos(amplitude, frequency=2.0):
    return {"kind": "sinusoid", "amplitude": amplitude, "frequency": frequency, "phase": 0.0}


_WEAK = {"actuator": _cos(0.1), "lambda": _cos(0.2), "z": _cos(0.1)}
_STRONG_CAPTION = {"actuator": _cos(2.0), "lambda": _cos(1.5), "z": _cos(1.0)}
_STRONG_TEXT = {"actuator": _cos(1.0), "lambda": _cos(1.5, 1.0), "z": _cos(1.0)}
_SHORT = {"t_end": 20.0, "dt": 1e-3, "record_stride": 10}
_ESO_SIM = {"t_end": 40.0, "dt": 2e-4, "record_stride": 50}


def _preset(mode, attacks, sim, eso=None, description=""):
    cfg = {
        "problem": _EXAMPLE_PROBLEM,
        "graph": _LINE4,
        "attacks": attacks,
        "mode": mode,
        "sim": sim,
        "initial": _X0,
    }
    if eso:
        cfg["eso"] = eso
    return description, cfg


PRESETS: dict[str, tuple[str, dict]] = {
    "nominal": _preset("nominal", {}, _SHORT, description="four generators on a line, no attacks"),
    "fig2_weak": _preset("compromised", _WEAK, _SHORT,
                         description="unprotected algorithm under weak attacks (0.1/0.2/0.1 cos 2t)"),
    "fig3_strong_caption": _preset("compromised", _STRONG_CAPTION, _SHORT,
                                   description="unprotected algorithm under strong attacks (2/1.5/1 cos 2t)"),
    "fig3_strong_text": _preset("compromised", _STRONG_TEXT, _SHORT,
                                description="strong attacks, alternate parameters (cos 2t, 1.5 cos t, cos 2t)"),
    "fig4_linear_eso": _preset("resilient_linear", _STRONG_CAPTION, _ESO_SIM, {"variant": "linear", "w0": 50.0},
                               description="linear-ESO resilient algorithm, w0=50, strong attacks"),
    "fig5_nonlinear_eso": _preset(
        "resilient_nonlinear", _STRONG_CAPTION, _ESO_SIM,
        {"variant": "nonlinear", "w0": 50.0, "h1": {"kind": "identity"},
         "h2": {"kind": "fal", "alpha": 0.125, "delta": 0.5}},
        description="fal-shaped ESO resilient algorithm, w0=50, strong attacks"),
}


@dataclass(eq=False)
class ScenarioConfig:
    name: str
    problem: AllocationProblem
    graph: NetworkGraph
    suite: AttackSuite
    mode: str
    eso: EsoConfig | None
    sim: SimConfig
    initial: AgentState
    kkt_bracket: tuple[float, float]
    output_dir: str | None
    raw: dict


# ---- parsing helpers -------------------------------------------------------

def _mapping(obj, path, allowed, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected a mapping, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(path, f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(path, f"missing required key(s) {missing}")
    return obj


def _num(v, path, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be nonnegative, got {v}")
    return v


def _int(v, path, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return v


def _vector_rows(v, path, n_agents=None):
    try:
        out = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a list of numbers, got {v!r}") from None
    if out.ndim not in (1, 2):
        raise ConfigError(path, "expected a list of numbers or a list of equal-length lists")
    if out.ndim == 1:
        out = out[:, None]
    if n_agents is not None and out.shape[0] != n_agents:
        raise ConfigError(path, f"expected {n_agents} entries, got {out.shape[0]}")
    if not np.all(np.isfinite(out)):
        raise ConfigError(path, "entries must be finite")
    return out


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        # an explicitly empty block resets to defaults rather than keeping the preset's
        if isinstance(v, dict) and v and isinstance(out.get(k), dict) and k not in ("actuator", "lambda", "z"):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _import(target: str, path: str):
    mod, _, attr = target.partition(":")
    if not attr:
        raise ConfigError(path, f"expected 'module:attribute', got {target!r}")
    try:
        return getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as err:
        raise ConfigError(path, f"cannot import {target!r}: {err}") from None


# ---- block builders (each returns canonical dict + object) -----------------

def _cost(spec, path):
    spec = _mapping(spec, path, {"kind", "a", "b", "c", "gradient", "modulus", "lipschitz"}, ("kind",))
    kind = spec["kind"]
    if kind == "quadratic":
        _mapping(spec, path, {"kind", "a", "b", "c"}, ("b", "c"))
        canon = {"kind": "quadratic", "a": _num(spec.get("a", 0.0), path + ".a"),
                 "b": _num(spec["b"], path + ".b"), "c": _num(spec["c"], path + ".c")}
        if canon["c"] <= 0:
            raise ConfigError(path + ".c", f"quadratic coefficient must be positive (strong convexity), got {canon['c']}")
        return canon, Quadratic(canon["a"], canon["b"], canon["c"])
    if kind == "general":
        _mapping(spec, path, {"kind", "gradient", "modulus", "lipschitz"}, ("gradient", "modulus", "lipschitz"))
        if not isinstance(spec["gradient"], str):
            raise ConfigError(path + ".gradient", "expected 'module:attribute' string")
        fn = _import(spec["gradient"], path + ".gradient")
        canon = {"kind": "general", "gradient": spec["gradient"],
                 "modulus": _num(spec["modulus"], path + ".modulus", positive=True),
                 "lipschitz": _num(spec["lipschitz"], path + ".lipschitz", positive=True)}
        try:
            f = GeneralConvex(fn, canon["modulus"], canon["lipschitz"], name=spec["gradient"])
        except ProblemError as err:
            raise ConfigError(path, str(err)) from None
        return canon, f
    raise ConfigError(path + ".kind", f"unknown cost kind {kind!r}; expected 'quadratic' or 'general'")


def _problem(spec, path="problem"):
    spec = _mapping(spec, path, {"costs", "demands", "drift", "kkt_bracket"}, ("costs", "demands"))
    if not isinstance(spec["costs"], list) or not spec["costs"]:
        raise ConfigError(path + ".costs", "expected a non-empty list")
    pairs = [_cost(c, f"{path}.costs[{i}]") for i, c in enumerate(spec["costs"])]
    demands = _vector_rows(spec["demands"], path + ".demands", len(pairs))
    dim = demands.shape[1]
    for i, (_, f) in enumerate(pairs):
        if isinstance(f, GeneralConvex) and not check_monotone(f, dim):
            raise ConfigError(f"{path}.costs[{i}]", "declared gradient fails the strong-monotonicity check")
    drift = _mapping(spec.get("drift", {"kind": "sin"}), path + ".drift", {"kind", "gain"}, ("kind",))
    dcanon = {"kind": drift["kind"], "gain": _num(drift.get("gain", 1.0), path + ".drift.gain")}
    try:
        drift_obj = Drift(dcanon["kind"], dcanon["gain"])
    except ProblemError as err:
        raise ConfigError(path + ".drift.kind", str(err)) from None
    bracket = spec.get("kkt_bracket", [-1e6, 1e6])
    if not (isinstance(bracket, list) and len(bracket) == 2):
        raise ConfigError(path + ".kkt_bracket", "expected [low, high]")
    lo, hi = (_num(b, f"{path}.kkt_bracket[{k}]") for k, b in enumerate(bracket))
    if lo >= hi:
        raise ConfigError(path + ".kkt_bracket", "low must be below high")
    canon = {"costs": [c for c, _ in pairs], "demands": demands.tolist() if dim > 1 else demands[:, 0].tolist(),
             "drift": dcanon, "kkt_bracket": [lo, hi]}
    return canon, AllocationProblem(tuple(f for _, f in pairs), demands, drift_obj), (lo, hi)


def _graph(spec, n_agents, path="graph"):
    spec = _mapping(spec, path, {"n", "edges"}, ("n", "edges"))
    n = _int(spec["n"], path + ".n", 1)
    if n != n_agents:
        raise ConfigError(path + ".n", f"graph has {n} nodes but the problem has {n_agents} agents")
    if not isinstance(spec["edges"], list):
        raise ConfigError(path + ".edges", "expected a list of [i, j, weight]")
    edges = []
    for k, e in enumerate(spec["edges"]):
        if not isinstance(e, list) or len(e) not in (2, 3):
            raise ConfigError(f"{path}.edges[{k}]", "expected [i, j] or [i, j, weight]")
        edges.append((e[0], e[1], e[2] if len(e) == 3 else 1.0))
    try:
        g = build_graph(n, edges)
    except GraphError as err:
        raise ConfigError(path + ".edges", str(err)) from None
    if not is_connected(g):
        raise ConfigError(path, "graph is not connected")
    return {"n": n, "edges": [[i, j, w] for i, j, w in g.edges]}, g


_SIGNAL_KEYS = {
    "zero": set(),
    "sinusoid": {"amplitude", "frequency", "phase"},
    "exosystem": {"S", "C", "w0"},
    "state_dependent": {"gain", "source", "s_max"},
}


def _signal(spec, path):
    spec = _mapping(spec, path, {"kind"} | set().union(*_SIGNAL_KEYS.values()), ("kind",))
    kind = spec["kind"]
    if kind not in _SIGNAL_KEYS:
        raise ConfigError(path + ".kind", f"unknown signal kind {kind!r}; expected one of {sorted(_SIGNAL_KEYS)}")
    _mapping(spec, path, {"kind"} | _SIGNAL_KEYS[kind])
    if kind == "zero":
        return {"kind": "zero"}, Zero()
    if kind == "sinusoid":
        canon = {"kind": kind, "amplitude": _num(spec.get("amplitude", 0.0), path + ".amplitude"),
                 "frequency": _num(spec.get("frequency", 0.0), path + ".frequency"),
                 "phase": _num(spec.get("phase", 0.0), path + ".phase")}
        return canon, Sinusoid(canon["amplitude"], canon["frequency"], canon["phase"])
    if kind == "exosystem":
        try:
            canon = {"kind": kind, "S": np.atleast_2d(np.array(spec["S"], float)).tolist(),
                     "C": np.atleast_2d(np.array(spec["C"], float)).tolist(),
                     "w0": np.array(spec["w0"], float).ravel().tolist()}
            return canon, Exosystem(np.array(canon["S"]), np.array(canon["C"]), np.array(canon["w0"]))
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(path, f"invalid exosystem: {err}") from None
    source = spec.get("source", "x")
    if source not in ("x", "lambda", "z"):
        raise ConfigError(path + ".source", "expected 'x', 'lambda' or 'z'")
    canon = {"kind": kind, "gain": _num(spec.get("gain", 1.0), path + ".gain"), "source": source,
             "s_max": _num(spec.get("s_max", 1.0), path + ".s_max", positive=True)}
    return canon, StateDependent(proportional(canon["gain"], source), canon["s_max"], label=f"{canon['gain']}*{source}")


def _attacks(spec, n_agents, path="attacks"):
    spec = _mapping(spec or {}, path, {"actuator", "lambda", "z", "neighbors_only"})
    canon: dict[str, Any] = {"neighbors_only": bool(spec.get("neighbors_only", False))}
    channels = []
    for name in ("actuator", "lambda", "z"):
        s = spec.get(name, {"kind": "zero"})
        if isinstance(s, list):
            if len(s) != n_agents:
                raise ConfigError(f"{path}.{name}", f"expected {n_agents} signals, got {len(s)}")
            pairs = [_signal(x, f"{path}.{name}[{i}]") for i, x in enumerate(s)]
            canon[name] = [c for c, _ in pairs]
            channels.append(tuple(o for _, o in pairs))
        else:
            c, o = _signal(s, f"{path}.{name}")
            canon[name] = c
            channels.append((o,) * n_agents)
    return canon, AttackSuite(*channels, neighbors_only=canon["neighbors_only"])


def _shaping(spec, path):
    spec = _mapping(spec, path, {"kind", "alpha", "delta"}, ("kind",))
    if spec["kind"] == "identity":
        _mapping(spec, path, {"kind"})
        return {"kind": "identity"}, Identity()
    if spec["kind"] == "fal":
        canon = {"kind": "fal", "alpha": _num(spec.get("alpha", 0.125), path + ".alpha"),
                 "delta": _num(spec.get("delta", 0.5), path + ".delta")}
        try:
            return canon, Fal(canon["alpha"], canon["delta"])
        except ValueError as err:
            raise ConfigError(path, str(err)) from None
    raise ConfigError(path + ".kind", f"unknown shaping {spec['kind']!r}; expected 'identity' or 'fal'")


def _eso(spec, mode, path="eso"):
    spec = _mapping(spec or {}, path, {"variant", "w0", "a1", "a2", "h1", "h2", "kappa_clamp"})
    implied = mode.split("_", 1)[1] if mode.startswith("resilient") else None
    variant = spec.get("variant", implied or "linear")
    if variant not in ("linear", "nonlinear"):
        raise ConfigError(path + ".variant", f"expected 'linear' or 'nonlinear', got {variant!r}")
    if implied and variant != implied:
        raise ConfigError(path + ".variant", f"mode {mode!r} requires variant {implied!r}")
    canon: dict[str, Any] = {"variant": variant, "w0": _num(spec.get("w0", 50.0), path + ".w0", positive=True)}
    for k in ("a1", "a2", "kappa_clamp"):
        v = spec.get(k)
        canon[k] = None if v is None else _num(v, f"{path}.{k}", positive=True)
    h1c, h1 = _shaping(spec.get("h1", {"kind": "identity"}), path + ".h1")
    default_h2 = {"kind": "identity"} if variant == "linear" else {"kind": "fal", "alpha": 0.125, "delta": 0.5}
    h2c, h2 = _shaping(spec.get("h2", default_h2), path + ".h2")
    canon["h1"], canon["h2"] = h1c, h2c
    try:
        cfg = EsoConfig(canon["w0"], variant, canon["a1"], canon["a2"], h1, h2, canon["kappa_clamp"])
    except ValueError as err:
        raise ConfigError(path, str(err)) from None
    return canon, cfg


def _sim(spec, path="sim"):
    allowed = {"t_end", "dt", "record_stride", "divergence_threshold", "tail_fraction", "backend"}
    spec = _mapping(spec or {}, path, allowed)
    d = SimConfig()
    canon = {
        "t_end": _num(spec.get("t_end", d.t_end), path + ".t_end", positive=True),
        "dt": _num(spec.get("dt", d.dt), path + ".dt", positive=True),
        "record_stride": _int(spec.get("record_stride", d.record_stride), path + ".record_stride", 1),
        "divergence_threshold": _num(spec.get("divergence_threshold", d.divergence_threshold),
                                     path + ".divergence_threshold", positive=True),
        "tail_fraction": _num(spec.get("tail_fraction", d.tail_fraction), path + ".tail_fraction", positive=True),
        "backend": spec.get("backend", d.backend),
    }
    try:
        return canon, SimConfig(**canon)
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


def _initial(spec, problem, path="initial"):
    spec = _mapping(spec, path, {"x", "lambda", "z"}, ("x",))
    shape = problem.demands.shape
    canon = {}
    arrays = []
    for k in ("x", "lambda", "z"):
        v = spec.get(k, 0.0)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            arr = np.full(shape, float(v))
            canon[k] = float(v)
        else:
            arr = _vector_rows(v, f"{path}.{k}", shape[0])
            if arr.shape != shape:
                raise ConfigError(f"{path}.{k}", f"expected shape {shape}, got {arr.shape}")
            canon[k] = arr.tolist() if shape[1] > 1 else arr[:, 0].tolist()
        arrays.append(arr)
    return canon, AgentState(*arrays)


def build_scenario(cfg: dict) -> ScenarioConfig:
    """Validate a config mapping (presets allowed) into a ScenarioConfig."""
    top = {"preset", "name", "problem", "graph", "attacks", "mode", "eso", "sim", "initial", "output"}
    cfg = _mapping(cfg, "", top)
    name = cfg.get("name")
    if "preset" in cfg:
        preset = cfg["preset"]
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        merged = _deep_merge(PRESETS[preset][1], {k: v for k, v in cfg.items() if k != "preset"})
        name = name or preset
        cfg = merged
    for k in ("problem", "graph", "mode", "initial"):
        if k not in cfg:
            raise ConfigError(k, "missing required block")
    mode = cfg["mode"]
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; expected one of {list(MODES)}")
    pc, problem, bracket = _problem(cfg["problem"])
    gc, graph = _graph(cfg["graph"], problem.n_agents)
    ac, suite = _attacks(cfg.get("attacks"), problem.n_agents)
    ec, eso = _eso(cfg.get("eso"), mode)
    sc, sim = _sim(cfg.get("sim"))
    ic, initial = _initial(cfg["initial"], problem)
    output = _mapping(cfg.get("output", {}), "output", {"dir"})
    out_dir = output.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output.dir", "expected a string path")
    name = str(name or "scenario")
    raw = {"name": name, "mode": mode, "problem": pc, "graph": gc, "attacks": ac, "eso": ec,
           "sim": sc, "initial": ic}
    if out_dir is not None:
        raw["output"] = {"dir": out_dir}
    return ScenarioConfig(name, problem, graph, suite, mode, eso if mode.startswith("resilient") else None,
                          sim, initial, bracket, out_dir, raw)


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError("", f"cannot parse {source}{where}: {err.problem}") from None
    except yaml.YAMLError as err:
        raise ConfigError("", f"cannot parse {source}: {err}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("", f"{source} must contain a mapping at the top level")
    return data


def load_config(source) -> ScenarioConfig:
    """Load from a path, a YAML string, or an already-parsed mapping."""
    if isinstance(source, dict):
        return build_scenario(source)
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        path = Path(source)
        return build_scenario(parse_text(path.read_text(), str(path)))
    return build_scenario(parse_text(str(source)))


def preset_config(name: str) -> ScenarioConfig:
    return build_scenario({"preset": name})


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical YAML for a scenario; ``load_config`` of it rebuilds the same scenario."""
    return yaml.safe_dump(cfg.raw, sort_keys=True, default_flow_style=None)


# ---- overrides used by sweeps ----------------------------------------------

ALIASES = {"w0": "eso.w0", "dt": "sim.dt", "attack_amplitude": "attacks.actuator.amplitude"}


def with_override(raw: dict, param: str, value) -> dict:
    """Copy of a canonical config with one scalar replaced.

    ``param`` is a dotted path (``eso.w0``), an alias from ``ALIASES``, or
    ``attack_scale`` which multiplies every attack signal's magnitude.
    """
    out = copy.deepcopy(raw)
    if param == "attack_scale":
        for channel in ("actuator", "lambda", "z"):
            specs = out["attacks"][channel]
            for s in specs if isinstance(specs, list) else [specs]:
                _scale_signal(s, float(value))
        return out
    path = ALIASES.get(param, param).split(".")
    node = out
    for key in path[:-1]:
        if isinstance(node, list):
            raise ConfigError(param, "cannot address a per-agent list by name; use a uniform signal")
        if key not in node:
            raise ConfigError(param, f"no such config entry {key!r}")
        node = node[key]
    if not isinstance(node, dict) or path[-1] not in node:
        raise ConfigError(param, f"no such config entry {path[-1]!r}")
    if isinstance(node[path[-1]], (dict, list)):
        raise ConfigError(param, "only scalar entries can be swept")
    node[path[-1]] = value
    return out


def _scale_signal(spec: dict, factor: float) -> None:
    kind = spec["kind"]
    if kind == "sinusoid":
        spec["amplitude"] *= factor
    elif kind == "exosystem":
        spec["C"] = (np.array(spec["C"]) * factor).tolist()
    elif kind == "state_dependent":
        spec["gain"] *= factor
        spec["s_max"] *= factor
