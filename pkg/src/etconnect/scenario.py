"""Scenario configuration: JSON schema validation, defaults, canonical hashing,
and construction of the plant/gains/scenario objects used by the pipeline."""

import copy
import hashlib
import json

import jsonschema
import numpy as np

from .gains import GainSet, coupling_gain, synthesize_gains
from .graphs import CommGraph, spectral_split
from .plant import PlantModel
from .protocol import TriggerDesign
from .sim import Scenario

TOOL_VERSION = "0.1.0"

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["plant", "graph", "design", "sim"],
    "additionalProperties": False,
    "properties": {
        "plant": {
            "type": "object",
            "required": ["A", "B", "C", "input_partition", "output_partition", "Q", "R"],
            "additionalProperties": False,
            "properties": {
                "A": _matrix, "B": _matrix, "C": _matrix,
                "input_partition": {"type": "array", "items": {"type": "integer"}},
                "output_partition": {"type": "array", "items": {"type": "integer"}},
                "Q": _matrix, "R": _matrix,
            },
        },
        "graph": {
            "type": "object",
            "required": ["adjacency"],
            "additionalProperties": False,
            "properties": {"adjacency": _matrix},
        },
        "design": {
            "type": "object",
            "required": ["controller_poles", "observer_poles_global",
                         "observer_poles_local"],
            "additionalProperties": False,
            "properties": {
                "controller_poles": _vector,
                "observer_poles_global": _vector,
                "observer_poles_local": {"type": "array", "items": _vector},
                "eta": {"oneOf": [{"type": "number"}, {"const": "auto"}]},
                "eta_floor_margin": {"type": "number"},
                "weights": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "wx": {"type": "number"}, "we": {"type": "number"},
                        "wi": _vector,
                    },
                },
                "alpha_grid": _vector,
                "gamma_mode": {"enum": ["enumerate", "worst_case"]},
                "config_cap": {"type": "integer"},
            },
        },
        "trigger": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f_slope": {"type": "number", "exclusiveMinimum": 0},
                "gamma_mode": {"enum": ["enumerate", "worst_case"]},
                "stay_integral_reset": {"enum": ["cumulative", "per_episode"]},
            },
        },
        "sim": {
            "type": "object",
            "required": ["dt", "duration", "x0"],
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "x0": _vector,
                "xhat0": {"type": "array", "items": _vector},
                "seed": {"type": "integer"},
                "disturbance_mode": {"enum": ["interior", "boundary"]},
                "jumps": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["t", "delta"],
                        "additionalProperties": False,
                        "properties": {"t": {"type": "number"}, "delta": _vector},
                    },
                },
                "eps_hold": {"type": "number"},
            },
        },
    },
}

_DEFAULTS = {
    "design": {
        "eta": "auto",
        "eta_floor_margin": 0.1,
        "weights": {"wx": 1.0, "we": 1.0, "wi": None},
        "alpha_grid": list(np.logspace(-3, 3, 13)),
        "gamma_mode": "enumerate",
        "config_cap": 12,
    },
    "trigger": {
        "f_slope": 0.01,
        "gamma_mode": "worst_case",
        "stay_integral_reset": "cumulative",
    },
    "sim": {
        "xhat0": None,
        "seed": 1,
        "disturbance_mode": "interior",
        "jumps": [],
        "eps_hold": 1e-3,
    },
}


class ConfigError(ValueError):
    pass


def resolve_config(raw: dict) -> dict:
    """Validate against the schema and fill in defaults; returns a new dict."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {path!r}: {exc.message}") from exc
    cfg = copy.deepcopy(raw)
    cfg.setdefault("trigger", {})
    for section, defaults in _DEFAULTS.items():
        block = cfg.setdefault(section, {})
        for key, value in defaults.items():
            block.setdefault(key, copy.deepcopy(value))
    n_agents = len(cfg["plant"]["input_partition"])
    if cfg["design"]["weights"].get("wi") is None:
        cfg["design"]["weights"]["wi"] = [1.0] * n_agents
    if cfg["sim"]["xhat0"] is None:
        cfg["sim"]["xhat0"] = [list(cfg["sim"]["x0"])] * n_agents
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return resolve_config(raw)


def config_hash(cfg: dict) -> str:
    """Hash of the design-relevant sections (plant, graph, design) after defaults."""
    payload = {k: cfg[k] for k in ("plant", "graph", "design")}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_plant(cfg: dict) -> PlantModel:
    p = cfg["plant"]
    return PlantModel(
        a=np.asarray(p["A"], dtype=float),
        b=np.asarray(p["B"], dtype=float),
        c=np.asarray(p["C"], dtype=float),
        input_partition=tuple(p["input_partition"]),
        output_partition=tuple(p["output_partition"]),
        q=np.asarray(p["Q"], dtype=float),
        r=np.asarray(p["R"], dtype=float),
    )


def build_graph(cfg: dict) -> CommGraph:
    return CommGraph(adjacency=np.asarray(cfg["graph"]["adjacency"], dtype=int))


def build_gains(cfg: dict, plant: PlantModel, underlying: CommGraph) -> GainSet:
    d = cfg["design"]
    eta = d["eta"]
    if eta == "auto":
        base = synthesize_gains(plant, d["controller_poles"],
                                d["observer_poles_global"],
                                d["observer_poles_local"], eta=0.0)
        split = spectral_split(underlying)
        eta = coupling_gain(plant, base, split,
                            floor_margin=d["eta_floor_margin"])
    return synthesize_gains(plant, d["controller_poles"],
                            d["observer_poles_global"],
                            d["observer_poles_local"], eta=float(eta))


def build_scenario(cfg: dict, plant: PlantModel, gains: GainSet,
                   underlying: CommGraph, design_data: dict, table) -> Scenario:
    trig_cfg = cfg["trigger"]
    trigger = TriggerDesign(
        y_weights=tuple(np.asarray(y, dtype=float) for y in design_data["Y"]),
        table=table,
        f_slope=trig_cfg["f_slope"],
        gamma_mode=trig_cfg["gamma_mode"],
        stay_reset=trig_cfg["stay_integral_reset"],
    )
    sim_cfg = cfg["sim"]
    return Scenario(
        plant=plant,
        gains=gains,
        underlying=underlying,
        p=np.asarray(design_data["P"], dtype=float),
        p_bar=np.asarray(design_data["P_bar"], dtype=float),
        trigger=trigger,
        duration=float(sim_cfg["duration"]),
        dt=float(sim_cfg["dt"]),
        seed=int(sim_cfg["seed"]),
        disturbance_mode=sim_cfg["disturbance_mode"],
        x0=np.asarray(sim_cfg["x0"], dtype=float),
        xhat0=[np.asarray(x, dtype=float) for x in sim_cfg["xhat0"]],
        jumps=[(j["t"], np.asarray(j["delta"], dtype=float))
               for j in sim_cfg["jumps"]],
        eps_hold=float(sim_cfg["eps_hold"]),
    )
