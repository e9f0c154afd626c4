"""Run configuration for the command line (JSON, ``"schema": 1``).

Example::

    {
      "schema": 1,
      "model": {"preset": "cosine-gradient"},
      "params": {"tau": 1.0, "sigma": 1.0, "n": 1},
      "spectral": {"N_F": 16, "N_H": 128},
      "mc": {"dt": 0.01, "T": 1.0, "paths": 10000,
             "eps_grid": [0.4, 0.2, 0.1, 0.05], "seed": 0, "p": 2},
      "outputs": "out"
    }

``model`` is either ``{"preset": name}`` (``"n"`` may be given for the flat
preset) or ``{"file": path}`` pointing to a drift JSON document; relative
paths resolve against the config file's directory.  Omitted fields take the
defaults below.  ``mc.T`` is the horizon in rescaled time; a run at ``eps``
simulates physical time ``T / eps^2``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ValidationError
from .langevin_core import DriftSpec, ModelParams, load_drift
from .presets import PRESETS, get_preset

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "model": {"preset": "flat"},
    "params": {"tau": 1.0, "sigma": 1.0, "n": 1},
    "spectral": {"N_F": None, "N_H": None, "ladder": None, "method": "auto"},
    "mc": {
        "dt": None,
        "T": 1.0,
        "paths": 10000,
        "eps_grid": [0.4, 0.2, 0.1, 0.05],
        "seed": 0,
        "p": 2.0,
        "k": None,
        "functional": "endpoint",
        "scheme": "splitting-strang",
        "initial_law": "fixed-point",
        "chunk_size": 500,
        "workers": 1,
        "records": 1,
    },
    "tau_ladder": [1.0, 0.1, 0.01, 0.001],
    "outputs": "out",
}

# execution settings (worker count, output location) cannot change any
# result, so artifacts omit them
EXECUTION_KEYS = {("mc", "workers"), (None, "outputs")}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "model":
            if not isinstance(val, dict):
                raise ValidationError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration."""

    doc: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".", seed: Optional[int] = None,
                  out: Optional[str] = None, workers: Optional[int] = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported config schema {doc.get('schema')!r}; expected 1")
        merged = _merge(DEFAULTS, doc)
        if seed is not None:
            merged["mc"]["seed"] = int(seed)
        if out is not None:
            merged["outputs"] = str(out)
        if workers is not None:
            merged["mc"]["workers"] = int(workers)
        cfg = cls(merged, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        text = path.read_text()  # OSError propagates (exit 3)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent, **overrides)

    # -- accessors -------------------------------------------------------
    @property
    def mc(self) -> dict:
        return self.doc["mc"]

    @property
    def spectral(self) -> dict:
        return self.doc["spectral"]

    @property
    def seed(self) -> int:
        return int(self.mc["seed"])

    @property
    def params(self) -> ModelParams:
        p = self.doc["params"]
        return ModelParams(float(p["tau"]), float(p["sigma"]), int(p["n"]))

    @property
    def output_dir(self) -> Path:
        out = Path(self.doc["outputs"])
        return out if out.is_absolute() else Path.cwd() / out

    @property
    def model_path(self) -> Optional[Path]:
        model = self.doc["model"]
        if "file" not in model:
            return None
        p = Path(model["file"])
        return p if p.is_absolute() else self.base_dir / p

    def drift(self) -> DriftSpec:
        model = self.doc["model"]
        if "file" in model:
            spec = load_drift(self.model_path)
        else:
            spec = get_preset(model["preset"], model.get("n", self.params.n))
        if spec.n != self.params.n:
            raise ValidationError(f"drift is {spec.n}-dimensional but params.n = {self.params.n}")
        return spec

    def validate(self) -> None:
        model = self.doc["model"]
        if not isinstance(model, dict) or len(set(model) & {"preset", "file"}) != 1:
            raise ValidationError('model must be {"preset": name} or {"file": path}')
        if set(model) - {"preset", "file", "n"}:
            raise ValidationError(f"unknown model keys {sorted(set(model) - {'preset', 'file', 'n'})}")
        if "preset" in model and model["preset"] not in PRESETS:
            raise ValidationError(f"unknown preset {model['preset']!r}; choose from {', '.join(PRESETS)}")
        if "file" in model and not self.model_path.exists():
            raise FileNotFoundError(f"drift file not found: {self.model_path}")
        self.params  # validates tau, sigma, n
        eps = self.mc["eps_grid"]
        if not isinstance(eps, list) or not all(isinstance(e, (int, float)) for e in eps):
            raise ValidationError("eps_grid must be a list of numbers")
        if any(not 0 < e < 1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValidationError("eps_grid must be strictly decreasing in (0, 1)")
        if not (isinstance(self.mc["paths"], int) and self.mc["paths"] >= 1):
            raise ValidationError("mc.paths must be a positive integer")
        if float(self.mc["p"]) < 1:
            raise ValidationError("mc.p must be >= 1")
        if self.mc["T"] is None or not float(self.mc["T"]) > 0:
            raise ValidationError("mc.T must be positive")

    def resolved(self) -> dict:
        """Config with every default filled in, minus execution settings."""
        doc = copy.deepcopy(self.doc)
        for section, key in EXECUTION_KEYS:
            (doc if section is None else doc[section]).pop(key, None)
        return doc

    def header_lines(self, command: str) -> list[str]:
        return [f"homog {command}", f"seed={self.seed}",
                "config=" + json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))]
