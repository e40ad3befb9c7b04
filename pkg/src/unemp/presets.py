"""Built-in parameter presets.

Presets are JSON documents (``schema_version`` 1) shipped in the
``presets`` directory of the package.  Schema::

    {
      "schema_version": 1,
      "name": str,
      "model": "new" | "munoli-gani" | "ocp",
      "params": {name: number},            # model presets
      "params_preset": str,                # ocp presets: base parameter preset
      "params_overrides": {name: number},  # ocp presets
      "initial_state": {"U": n, "E": n[, "V": n]},
      "vacancy": {"fourier3": {...}} ,     # optional
      "horizon": [t0, t1],
      ...                                  # ocp: weights, bounds, grid
    }

A preset may also be loaded from any file path with the same layout.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import InvalidInputError
from .model import BaselineParams, ModelParams, VacancyFunction

SCHEMA_VERSION = 1

MODEL_ALIASES = {
    "new": "portugal-2004-2016",
    "munoli-gani": "munoli-gani-2016",
}


def list_presets() -> list[str]:
    root = resources.files("unemp") / "presets"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name_or_path: str) -> dict:
    name = MODEL_ALIASES.get(name_or_path, name_or_path)
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("unemp") / "presets" / f"{name}.json"
        if not res.is_file():
            raise InvalidInputError(
                f"unknown preset {name_or_path!r}; available: {', '.join(list_presets())}"
            )
        text = res.read_text(encoding="utf-8")
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInputError(
            f"preset {name_or_path!r} has schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    return doc


def _build(cls, params: dict, overrides: dict | None):
    merged = dict(params)
    for key, value in (overrides or {}).items():
        if key not in merged:
            raise InvalidInputError(f"unknown parameter {key!r} for {cls.__name__}")
        merged[key] = value
    return cls(**{k: float(v) for k, v in merged.items()})


def model_params(name: str = "portugal-2004-2016", overrides: dict | None = None) -> ModelParams:
    doc = load_preset(name)
    if doc["model"] == "ocp":
        base = load_preset(doc["params_preset"])["params"]
        params = _build(ModelParams, base, doc.get("params_overrides"))
        return _build(ModelParams, params.as_dict(), overrides)
    if doc["model"] != "new":
        raise InvalidInputError(f"preset {name!r} is not a two-compartment preset")
    return _build(ModelParams, doc["params"], overrides)


def baseline_params(name: str = "munoli-gani-2016", overrides: dict | None = None) -> BaselineParams:
    doc = load_preset(name)
    if doc["model"] != "munoli-gani":
        raise InvalidInputError(f"preset {name!r} is not a baseline preset")
    return _build(BaselineParams, doc["params"], overrides)


def preset_vacancy(name: str = "portugal-2004-2016") -> VacancyFunction:
    doc = load_preset(name)
    return VacancyFunction(**{k: float(v) for k, v in doc["vacancy"]["fourier3"].items()})


def portugal_params() -> ModelParams:
    return model_params("portugal-2004-2016")


def munoli_gani_params() -> BaselineParams:
    return baseline_params("munoli-gani-2016")


# January 2004 vacancies: 4848 in the prose, 9625 in the simulation listing.
V0_TEXT = 4848.0
V0_CODE = 9625.0
U0_PORTUGAL = 464450.0
E0_PORTUGAL = 6450694.0
