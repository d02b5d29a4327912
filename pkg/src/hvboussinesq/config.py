"""Simulation configuration: JSON schema, defaults, validation and presets."""
from __future__ import annotations

import copy
import difflib
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .laws import BuoyancySpec, ConductivitySpec, PiecewiseLaw, conductivity, law_from_json
from .mesh import SIDES


class ConfigError(ValueError):
    """Schema or physical-constraint violation; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


DEFAULTS: dict[str, Any] = {
    "mesh": {"nx": 8, "ny": 8, "gamma1_sides": ["bottom"], "width": 1.0, "height": 1.0},
    "physics": {
        "alpha": 1.0,
        "conductivity": {"kind": "constant", "value": 1.0},
        "buoyancy": {"e": [0.0, 1.0], "beta": 0.0},
        "source_g": {"kind": "zero"},
        "body_force": {"kind": "zero"},
    },
    "laws": {
        "friction": {"preset": "zero"},
        "heat_flux": {"preset": "zero"},
        "mollification_m": 8,
        "constants_range": 10.0,
    },
    "initial": {"u0": {"kind": "zero"}, "theta0": {"kind": "zero"}},
    "time": {"T": 1.0, "dt": 0.01, "lag": 1},
    "solver": {
        "picard_tol": 1e-8,
        "picard_max": 60,
        "picard_damping_after": 10,
        "linear_tol": 1e-10,
        "regularize": True,
        "allow_h0_violation": False,
    },
    "output": {"cadence": 0, "fields_format": "vtu", "name": "run"},
}

# Values of these keys are free-form descriptors validated by their own parsers.
_OPAQUE = {
    ("physics", "conductivity"),
    ("physics", "source_g"),
    ("physics", "body_force"),
    ("laws", "friction"),
    ("laws", "heat_flux"),
    ("initial", "u0"),
    ("initial", "theta0"),
}


# Common names for keys that this schema spells differently.
_SYNONYMS = {
    "viscosity": "physics.alpha",
    "kinematic_viscosity": "physics.alpha",
    "diffusivity": "physics.conductivity",
    "kappa": "physics.conductivity",
    "mollification": "laws.mollification_m",
    "retardation": "time.lag",
}


def _all_paths(d: dict, prefix: tuple = ()) -> list[str]:
    out = []
    for k, v in d.items():
        out.append(".".join(prefix + (k,)))
        if isinstance(v, dict) and prefix + (k,) not in _OPAQUE:
            out += _all_paths(v, prefix + (k,))
    return out


def _suggest(key: str, local: list[str]) -> str | None:
    near = difflib.get_close_matches(key, local, n=1)
    if near:
        return near[0]
    near = difflib.get_close_matches(key, list(_SYNONYMS), n=1, cutoff=0.75)
    if near:
        return _SYNONYMS[near[0]]
    paths = _all_paths(DEFAULTS)
    near = difflib.get_close_matches(key, [p.rsplit(".", 1)[-1] for p in paths], n=1)
    if near:
        return next(p for p in paths if p.rsplit(".", 1)[-1] == near[0])
    return None


def _merge(defaults: dict, given: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = ".".join(path + (key,))
        if key not in defaults:
            near = _suggest(key, list(defaults))
            hint = f" (did you mean {near!r}?)" if near else ""
            raise ConfigError(where, f"unknown key {key!r}{hint}")
        if isinstance(defaults[key], dict) and path + (key,) not in _OPAQUE:
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(defaults[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


# --- field descriptors -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FieldSpec:
    """Space-time field f(x, y, t); scalar, or vector when ``vector`` is set."""

    kind: str
    params: dict = field(default_factory=dict)
    vector: bool = False
    fn: Callable | None = None

    def is_zero(self) -> bool:
        return self.kind == "zero"

    def __call__(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.fn is not None:
            return self.fn(x, y, t)
        if self.kind == "zero":
            z = np.zeros_like(x)
            return (z, z.copy()) if self.vector else z
        if self.kind == "constant":
            if self.vector:
                vx, vy = p["value"]
                return np.full_like(x, vx), np.full_like(x, vy)
            return np.full_like(x, p["value"])
        if self.kind == "gaussian":
            cx, cy = p["center"]
            val = p["amplitude"] * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * p["width"] ** 2))
            return val * math.exp(-p.get("decay", 0.0) * t)
        if self.kind == "sine":
            w, h = p["extent"]
            return p["amplitude"] * np.sin(np.pi * x / w) * np.sin(np.pi * y / h)
        if self.kind == "vortex":
            # curl of A sin^2(pi x / w) sin^2(pi y / h): divergence free, zero on the boundary
            w, h = p["extent"]
            a = p["amplitude"]
            sx, sy = np.sin(np.pi * x / w), np.sin(np.pi * y / h)
            dsx = 2 * sx * np.cos(np.pi * x / w) * np.pi / w
            dsy = 2 * sy * np.cos(np.pi * y / h) * np.pi / h
            return a * sx ** 2 * dsy, -a * dsx * sy ** 2
        raise ValueError(f"field kind {self.kind!r} cannot be evaluated")


_FIELD_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "gaussian": {"amplitude", "center", "width", "decay"},
    "sine": {"amplitude"},
    "vortex": {"amplitude"},
    "manufactured": set(),
}
_SCALAR_KINDS = {"zero", "constant", "gaussian", "sine", "manufactured"}
_VECTOR_KINDS = {"zero", "constant", "vortex", "manufactured"}


def parse_field(d: dict, where: str, vector: bool, extent) -> FieldSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(where, "field descriptor needs a 'kind'")
    kind = d["kind"]
    kinds = _VECTOR_KINDS if vector else _SCALAR_KINDS
    if kind not in kinds:
        raise ConfigError(where, f"unknown kind {kind!r}; choose from {sorted(kinds)}")
    params = {k: v for k, v in d.items() if k != "kind"}
    unknown = set(params) - _FIELD_KEYS[kind]
    if unknown:
        key = sorted(unknown)[0]
        near = difflib.get_close_matches(key, sorted(_FIELD_KEYS[kind]), n=1)
        hint = f" (did you mean {near[0]!r}?)" if near else ""
        raise ConfigError(f"{where}.{key}", f"unknown key {key!r}{hint}")
    if kind in ("sine", "vortex"):
        params["extent"] = tuple(extent)
    if kind == "gaussian":
        for k in ("amplitude", "center", "width"):
            if k not in params:
                raise ConfigError(f"{where}.{k}", "missing")
        if not params["width"] > 0:
            raise ConfigError(f"{where}.width", "must be positive")
    return FieldSpec(kind, params, vector)


# --- configuration -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimConfig:
    nx: int
    ny: int
    gamma1_sides: tuple
    width: float
    height: float
    alpha: float
    conductivity: ConductivitySpec
    buoyancy: BuoyancySpec
    source_g: FieldSpec
    body_force: FieldSpec
    friction: PiecewiseLaw
    heat_flux: PiecewiseLaw
    mollification_m: int
    constants_range: float
    u0: FieldSpec
    theta0: FieldSpec
    T: float
    dt: float
    lag: int
    picard_tol: float
    picard_max: int
    picard_damping_after: int
    linear_tol: float
    regularize: bool
    allow_h0_violation: bool
    output: dict
    raw: dict

    @property
    def h(self) -> float:
        """Retardation lag as a time span."""
        return self.lag * self.dt

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def config_hash(self) -> str:
        return config_hash(self.raw)

    def with_updates(self, **changes) -> "SimConfig":
        """Re-parse with dotted-path overrides, e.g. ``{"time.dt": 0.01}``."""
        raw = copy.deepcopy(self.raw)
        for dotted, value in changes.items():
            node = raw
            keys = dotted.split(".")
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
        cfg = parse_config(raw)
        # keep programmatic fields that JSON cannot express
        repl = {}
        for name in ("source_g", "body_force", "u0", "theta0"):
            old = getattr(self, name)
            if old.fn is not None and old.kind != "manufactured":
                repl[name] = old
        if repl:
            cfg = _replace(cfg, **repl)
        return cfg


def _replace(cfg: SimConfig, **kw) -> SimConfig:
    import dataclasses

    return dataclasses.replace(cfg, **kw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(source) -> SimConfig:
    """Validate a JSON file path or dict and return a :class:`SimConfig`."""
    if isinstance(source, (str, Path)):
        try:
            given = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    else:
        given = copy.deepcopy(source)
    if not isinstance(given, dict):
        raise ConfigError("", "top level must be an object")
    raw = _merge(DEFAULTS, given)

    m = raw["mesh"]
    for k in ("nx", "ny"):
        if not isinstance(m[k], int) or m[k] < 1:
            raise ConfigError(f"mesh.{k}", "must be an integer >= 1")
    sides = tuple(m["gamma1_sides"])
    bad = [s for s in sides if s not in SIDES]
    if bad:
        raise ConfigError("mesh.gamma1_sides", f"unknown side(s) {bad}; use {list(SIDES)}")
    if set(sides) == set(SIDES):
        raise ConfigError("mesh.gamma1_sides", "Gamma_0 must be nonempty")
    if not (m["width"] > 0 and m["height"] > 0):
        raise ConfigError("mesh", "width and height must be positive")
    extent = (float(m["width"]), float(m["height"]))

    ph = raw["physics"]
    if not ph["alpha"] > 0:
        raise ConfigError("physics.alpha", "viscosity must be positive")
    try:
        cd = dict(ph["conductivity"])
        k = conductivity(cd.pop("kind", "constant"), **cd)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError("physics.conductivity", str(exc)) from exc
    problems = k.verify()
    if problems:
        raise ConfigError("physics.conductivity", "; ".join(problems) + ' (H(k): "k(r) > delta")')
    b = ph["buoyancy"]
    if set(b) - {"e", "beta"}:
        raise ConfigError("physics.buoyancy", f"unknown keys {sorted(set(b) - {'e', 'beta'})}")
    e = tuple(float(v) for v in b.get("e", (0.0, 1.0)))
    if len(e) != 2 or not all(map(math.isfinite, e)):
        raise ConfigError("physics.buoyancy.e", "direction must be a finite 2-vector")
    buoy = BuoyancySpec(e, float(b.get("beta", 0.0)))
    g = parse_field(ph["source_g"], "physics.source_g", False, extent)
    fb = parse_field(ph["body_force"], "physics.body_force", True, extent)

    lw = raw["laws"]
    try:
        friction = law_from_json(lw["friction"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError("laws.friction", str(exc)) from exc
    try:
        heat = law_from_json(lw["heat_flux"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError("laws.heat_flux", str(exc)) from exc
    if not isinstance(lw["mollification_m"], int) or lw["mollification_m"] < 1:
        raise ConfigError("laws.mollification_m", "must be an integer >= 1")

    ini = raw["initial"]
    u0 = parse_field(ini["u0"], "initial.u0", True, extent)
    th0 = parse_field(ini["theta0"], "initial.theta0", False, extent)

    tm = raw["time"]
    if not tm["dt"] > 0:
        raise ConfigError("time.dt", "must be positive")
    if not tm["T"] >= tm["dt"]:
        raise ConfigError("time.T", "must be >= dt")
    n = tm["T"] / tm["dt"]
    if abs(n - round(n)) > 1e-9 * n:
        raise ConfigError("time.dt", "T must be an integer multiple of dt")
    if not isinstance(tm["lag"], int) or tm["lag"] < 1:
        raise ConfigError("time.lag", "must be an integer >= 1")

    sv = raw["solver"]
    if not sv["picard_tol"] > 0 or sv["picard_max"] < 1:
        raise ConfigError("solver", "picard_tol must be positive and picard_max >= 1")

    cfg = SimConfig(
        nx=m["nx"], ny=m["ny"], gamma1_sides=sides, width=extent[0], height=extent[1],
        alpha=float(ph["alpha"]), conductivity=k, buoyancy=buoy, source_g=g, body_force=fb,
        friction=friction, heat_flux=heat, mollification_m=lw["mollification_m"],
        constants_range=float(lw["constants_range"]), u0=u0, theta0=th0,
        T=float(tm["T"]), dt=float(tm["dt"]), lag=tm["lag"],
        picard_tol=float(sv["picard_tol"]), picard_max=int(sv["picard_max"]),
        picard_damping_after=int(sv["picard_damping_after"]),
        linear_tol=float(sv["linear_tol"]), regularize=bool(sv["regularize"]),
        allow_h0_violation=bool(sv["allow_h0_violation"]),
        output=dict(raw["output"]), raw=raw,
    )
    return _attach_manufactured(cfg)


_MANUFACTURED_SLOTS = {"source_g": "g", "body_force": "f", "u0": "u", "theta0": "theta"}


def _attach_manufactured(cfg: SimConfig) -> SimConfig:
    slots = [n for n in _MANUFACTURED_SLOTS if getattr(cfg, n).kind == "manufactured"]
    if not slots:
        return cfg
    if (cfg.width, cfg.height) != (1.0, 1.0):
        raise ConfigError("mesh", "manufactured fields are defined on the unit square only")
    if cfg.conductivity.kind not in ("constant", "sine"):
        raise ConfigError("physics.conductivity", "manufactured sources need a smooth conductivity")
    from .manufactured import fields_for

    exact = fields_for(cfg)
    repl = {}
    for n in slots:
        spec = getattr(cfg, n)
        repl[n] = FieldSpec(spec.kind, spec.params, spec.vector, exact[_MANUFACTURED_SLOTS[n]])
    return _replace(cfg, **repl)


# --- scenario presets ----------------------------------------------------------

SCENARIOS: dict[str, dict] = {
    "heated-cavity-slip": {
        "mesh": {"nx": 16, "ny": 16, "gamma1_sides": ["bottom"]},
        "physics": {
            "alpha": 1.0,
            "conductivity": {"kind": "sine", "a": 1.5, "b": 0.5, "c": 1.0},
            "buoyancy": {"e": [0.0, 1.0], "beta": 40.0},
            "source_g": {"kind": "gaussian", "amplitude": 10.0, "center": [0.3, 0.15], "width": 0.12},
        },
        "laws": {
            "friction": {"preset": "stick_slip", "mu_s": 0.3, "mu_k": 0.2, "s0": 0.05, "width": 0.1},
            "heat_flux": {"preset": "nonmonotone_flux", "kappa": 0.4, "r0": 0.5, "r1": 1.0},
            "mollification_m": 8,
        },
        "initial": {"theta0": {"kind": "gaussian", "amplitude": 1.0, "center": [0.5, 0.35], "width": 0.15}},
        "time": {"T": 0.5, "dt": 0.5 / 64, "lag": 1},
        "output": {"name": "heated-cavity-slip", "cadence": 16},
    },
    "stokes-check": {
        "mesh": {"nx": 8, "ny": 8, "gamma1_sides": ["bottom"]},
        "physics": {
            "alpha": 1.0,
            "buoyancy": {"e": [0.0, 1.0], "beta": 10.0},
        },
        "initial": {"theta0": {"kind": "sine", "amplitude": 1.0}},
        "time": {"T": 0.1, "dt": 0.01, "lag": 1},
        "output": {"name": "stokes-check", "cadence": 5},
    },
    "manufactured": {
        "mesh": {"nx": 8, "ny": 8, "gamma1_sides": []},
        "physics": {
            "alpha": 1.0,
            "conductivity": {"kind": "sine", "a": 1.5, "b": 0.5, "c": 1.0},
            "buoyancy": {"e": [0.0, 1.0], "beta": 1.0},
            "source_g": {"kind": "manufactured"},
            "body_force": {"kind": "manufactured"},
        },
        "initial": {"u0": {"kind": "manufactured"}, "theta0": {"kind": "manufactured"}},
        "time": {"T": 0.05, "dt": 0.05 / 2048, "lag": 1},
        "output": {"name": "manufactured"},
    },
}


def scenario(name: str, **overrides) -> SimConfig:
    if name not in SCENARIOS:
        raise ConfigError("", f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    cfg = parse_config(SCENARIOS[name])
    return cfg.with_updates(**overrides) if overrides else cfg
