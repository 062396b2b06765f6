"""Named scenario presets.

The ``paper-*`` presets use the 50x50 lattice with R = 5 and V = 4 I; the
horizon and the disturbance magnitudes are artifact choices. The ``desk-*``
presets shrink the lattice to 20x20 and K to 800 with windows scaled to
match, and pin the c_beta the acceptance suite runs with.
"""
from __future__ import annotations

import copy

from .config import ScenarioConfig

_PAPER_SOURCES = [
    {"row": 12, "col": 14, "magnitude": 10.0},
    {"row": 36, "col": 38, "magnitude": 8.0},
    {"row": 38, "col": 10, "magnitude": 6.0},
]
_DESK_SOURCES = [
    {"row": 5, "col": 6, "magnitude": 10.0},
    {"row": 14, "col": 15, "magnitude": 8.0},
    {"row": 15, "col": 4, "magnitude": 6.0},
]

_PRESETS: dict[str, dict] = {
    "paper-typeI-slow": {
        "grid": {"side": 50},
        "horizon": 1000,
        "agents": {"count": 3, "radius": 5.0, "noise_variance": 4.0},
        "dynamics": {"diffusion": 0.01, "dt": 0.1},
        "initial_field": {"sources": _PAPER_SOURCES},
        "disturbance": {"type": "I", "kind": "decay", "onset": 100, "cells": 4,
                        "magnitude": [500.0, 1000.0]},
        "filter": {"mode": "type1", "lambda_bar": 1.0, "engine": "lifted"},
        "trials": 20,
    },
    "paper-typeII-abrupt": {
        "grid": {"side": 50},
        "horizon": 1000,
        "agents": {"count": 3, "radius": 5.0, "noise_variance": 4.0},
        "dynamics": {"diffusion": 0.01, "dt": 0.1},
        "initial_field": {"sources": _PAPER_SOURCES},
        "disturbance": {"type": "II", "kind": "windows", "windows": [[150, 165], [600, 615]],
                        "cells": 1, "magnitude": [1.0, 2.0]},
        "filter": {"mode": "type2", "gamma": 0.99, "engine": "lifted"},
        "trials": 20,
    },
    "desk-typeI-slow": {
        "grid": {"side": 20},
        "horizon": 800,
        "agents": {"count": 3, "radius": 3.0, "noise_variance": 4.0},
        "dynamics": {"diffusion": 0.01, "dt": 0.1},
        "initial_field": {"sources": _DESK_SOURCES},
        "disturbance": {"type": "I", "kind": "decay", "onset": 80, "cells": 4,
                        "magnitude": [500.0, 1000.0]},
        "filter": {"mode": "type1", "lambda_bar": 1.0, "engine": "lifted"},
        "confidence": {"c_beta": 1e-4},
        "trials": 20,
    },
    "desk-typeII-abrupt": {
        "grid": {"side": 20},
        "horizon": 800,
        "agents": {"count": 3, "radius": 3.0, "noise_variance": 4.0},
        "dynamics": {"diffusion": 0.01, "dt": 0.1},
        "initial_field": {"sources": _DESK_SOURCES},
        # injections land next to the strongest source, inside the sensed region
        "disturbance": {"type": "II", "kind": "windows", "windows": [[120, 132], [480, 492]],
                        "cells": 1, "magnitude": [1.0, 2.0], "placement": "near_peak",
                        "near_band": [2.0, 3.0]},
        "filter": {"mode": "type2", "gamma": 0.99, "engine": "lifted"},
        "confidence": {"c_beta": 5e-6},
        "trials": 20,
    },
    "null": {
        "grid": {"side": 10},
        "horizon": 200,
        "agents": {"count": 3, "radius": 2.0, "noise_variance": 4.0},
        "initial_field": {"sources": [{"row": 2, "col": 3, "magnitude": 10.0},
                                      {"row": 7, "col": 6, "magnitude": 6.0}]},
        "disturbance": {"kind": "none"},
    },
}


def builtin_scenarios() -> dict[str, ScenarioConfig]:
    return {name: get_scenario(name) for name in _PRESETS}


def get_scenario(name: str) -> ScenarioConfig:
    try:
        data = copy.deepcopy(_PRESETS[name])
    except KeyError:
        raise KeyError(f"no built-in scenario {name!r}; known: {', '.join(_PRESETS)}") from None
    data["name"] = name
    data.setdefault("output", {"dir": f"runs/{name}"})
    return ScenarioConfig.from_dict(data)
