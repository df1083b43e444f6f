"""JSON serialization of models and output files with provenance."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .hmm import HiddenMarkovModel
from .markov import MarkovModel
from .mixture import MixtureModel

_LOADERS = {
    "mm": MarkovModel.from_dict,
    "hmm": HiddenMarkovModel.from_dict,
    "mmm": MixtureModel.from_dict,
    "mhmm": MixtureModel.from_dict,
}


def model_from_dict(d: dict):
    try:
        loader = _LOADERS[d["type"]]
    except KeyError:
        raise DataError(f"unknown model type {d.get('type')!r}") from None
    return loader(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "Inf" if x > 0 else "-Inf"
        return x
    return obj


def dumps(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | Path, payload: dict, provenance: dict | None = None) -> None:
    if provenance is not None:
        payload = {**payload, "provenance": provenance}
    Path(path).write_text(dumps(payload), encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_model(path: str | Path):
    return model_from_dict(read_json(path))
