"""Experiment description: bubbles, grid, schedule, noise and final residue,
with schema validation and the derived objects every pipeline stage needs."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from functools import cached_property
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .decomposition import LocalizerSet, build_localizers
from .fields import ComplexField, Grid, make_grid
from .groundstate import GroundStateTable, ground_state
from .perturbation import (PerturbationModel, Paths, build_flat_spatial, build_residue,
                           sample_brownian)
from .profiles import BubbleSpec, check_separation

SCHEMA = {
    "type": "object",
    "required": ["d", "bubbles", "T", "grid", "dt", "schedule"],
    "properties": {
        "name": {"type": "string"},
        "d": {"enum": [1, 2]},
        "bubbles": {
            "type": "array", "minItems": 1, "maxItems": 5,
            "items": {
                "type": "object", "required": ["x", "w"],
                "properties": {
                    "x": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
                    "w": {"type": "number", "exclusiveMinimum": 0},
                    "theta": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        "T": {"type": "number"},
        "grid": {
            "type": "object", "required": ["L", "N"],
            "properties": {"L": {"type": "number", "exclusiveMinimum": 0},
                           "N": {"type": "integer", "minimum": 64}},
            "additionalProperties": False,
        },
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "schedule": {
            "type": "object", "required": ["t_star", "ratio", "levels"],
            "properties": {
                "t_star": {"type": "number"},
                "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "levels": {"type": "integer", "minimum": 0},
                "samples_per_level": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "upsilon": {"type": "integer", "minimum": 0},
                "amplitude": {"type": "number"},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "path_dt": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "residue": {
            "type": "object",
            "properties": {
                "m": {"type": "integer", "minimum": 0},
                "alpha_star": {"type": "number", "minimum": 0},
                "width": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "A": {"type": "number", "minimum": 10},
        "budget": {
            "type": "object",
            "properties": {k: {"type": "number"} for k in ("C", "C2", "delta", "eps")},
            "additionalProperties": False,
        },
        "output": {"type": "string"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "noise": {"count": 0, "upsilon": 5, "amplitude": 0.1, "width": 1.25, "seed": 0, "path_dt": 0.005},
    "residue": {"m": 4, "alpha_star": 0.0, "width": 1.25},
    "A": 20.0,
    "budget": {},
    "output": "runs",
}


class ScenarioError(ValueError):
    """Schema or consistency violations, one message per offending path."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def validate(data: dict) -> list[str]:
    v = jsonschema.Draft202012Validator(SCHEMA)
    problems = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                for e in sorted(v.iter_errors(data), key=lambda e: list(e.absolute_path))]
    if problems:
        return problems
    d = data["d"]
    for i, b in enumerate(data["bubbles"]):
        if len(b["x"]) != d:
            problems.append(f"bubbles/{i}/x: expected {d} coordinates")
    N = data["grid"]["N"]
    if N & (N - 1):
        problems.append("grid/N: must be a power of two")
    if not data["schedule"]["t_star"] < data["T"]:
        problems.append("schedule/t_star: must precede T")
    return problems


class Scenario:
    """Validated experiment description with lazily built derived objects."""

    def __init__(self, data: dict, seed: int | None = None):
        problems = validate(data)
        if problems:
            raise ScenarioError(problems)
        cfg = copy.deepcopy(data)
        for key, default in DEFAULTS.items():
            if isinstance(default, dict):
                cfg[key] = {**default, **cfg.get(key, {})}
            else:
                cfg.setdefault(key, default)
        cfg["schedule"].setdefault("samples_per_level", 20)
        if seed is not None:
            cfg["noise"]["seed"] = int(seed)
        self.config = cfg
        self.d = cfg["d"]
        self.T = float(cfg["T"])
        self.dt = float(cfg["dt"])
        self.t_star = float(cfg["schedule"]["t_star"])
        self.specs = [BubbleSpec(b["w"], b["x"], b.get("theta", 0.0)) for b in cfg["bubbles"]]
        self.K = len(self.specs)
        self.w = [s.w for s in self.specs]
        check_separation(self.specs)
        self.warnings = self._preconditions()

    @classmethod
    def load(cls, path, seed: int | None = None) -> "Scenario":
        return cls(json.loads(Path(path).read_text()), seed)

    # --- derived quantities ---------------------------------------------------

    @property
    def m(self) -> int:
        return int(self.config["residue"]["m"])

    @property
    def upsilon(self) -> int:
        return int(self.config["noise"]["upsilon"])

    @property
    def alpha_star(self) -> float:
        return float(self.config["residue"]["alpha_star"])

    @property
    def kappa(self) -> float:
        return min(self.m + self.d / 2 - 1, self.upsilon - 2)

    @property
    def separation(self) -> float:
        xs = [s.x for s in self.specs]
        gaps = [np.linalg.norm(a - b) for i, a in enumerate(xs) for b in xs[i + 1:]]
        return float(min(gaps)) if gaps else math.inf

    @property
    def frequency_spread(self) -> float:
        return float(max(self.w) - min(self.w))

    @property
    def smallness(self) -> float:
        """Case (I) equal frequencies: inverse separation; Case (II): the spread."""
        if self.frequency_spread == 0:
            return 1.0 / self.separation if self.K > 1 else 0.0
        return self.frequency_spread

    def _preconditions(self) -> list[str]:
        notes = []
        if self.config["noise"]["count"] > 0 and self.upsilon < 5:
            notes.append(f"flatness order {self.upsilon} below the required 5")
        need_m = 4 if self.d == 1 else 3
        if self.m < need_m:
            notes.append(f"residue order m={self.m} below {need_m} for d={self.d}")
        for n in notes:
            warnings.warn(n, stacklevel=3)
        return notes

    @cached_property
    def grid(self) -> Grid:
        g = self.config["grid"]
        return make_grid(self.d, g["L"], g["N"])

    @cached_property
    def gs(self) -> GroundStateTable:
        return ground_state(self.d)

    @cached_property
    def localizers(self) -> LocalizerSet:
        return build_localizers([s.x for s in self.specs], self.grid)

    @property
    def singularities(self) -> np.ndarray:
        return np.array([s.x for s in self.specs])

    @cached_property
    def model(self) -> PerturbationModel:
        nz = self.config["noise"]
        if nz["count"] == 0 or nz["amplitude"] == 0:
            return PerturbationModel(self.grid)
        phis = tuple(build_flat_spatial(self.grid, self.singularities, nz["upsilon"],
                                        width=nz["width"] * (1 + 0.5 * l), amplitude=nz["amplitude"])
                     for l in range(nz["count"]))
        n_nodes = max(2, int(round((self.T - self.t_star) / nz["path_dt"])) + 1)
        times = np.linspace(self.t_star, self.T, n_nodes)
        paths = sample_brownian(nz["count"], times, nz["seed"])
        return PerturbationModel(self.grid, phis, paths, nz["upsilon"], nz["seed"])

    @property
    def paths(self) -> Paths | None:
        return self.model.paths

    def zstar_field(self) -> ComplexField:
        r = self.config["residue"]
        if r["alpha_star"] == 0:
            return ComplexField(self.grid, np.zeros(self.grid.shape, dtype=complex))
        return build_residue(self.grid, self.singularities, r["m"], r["alpha_star"], r["width"]).field()

    @property
    def t_schedule(self) -> list[float]:
        s = self.config["schedule"]
        return [self.T - (self.T - self.t_star) * s["ratio"] ** n for n in range(s["levels"] + 1)]

    def sample_times(self, n: int | None = None) -> np.ndarray:
        """Geometric grid in T - t shared by every trajectory; with n, only the
        part between t* and t_n."""
        s = self.config["schedule"]
        S = s["samples_per_level"]
        top = s["levels"] * S if n is None else n * S
        j = np.arange(top + 1)
        return self.T - (self.T - self.t_star) * s["ratio"] ** (j / S)

    def budget_constants(self):
        from .diagnostics import BudgetConstants
        b = self.config["budget"]
        return BudgetConstants(C=b.get("C", 1.0), C2=b.get("C2", 1.0), delta=b.get("delta", 1.0),
                               eps=b.get("eps", self.smallness), alpha_star=self.alpha_star,
                               m=self.m, upsilon=self.upsilon)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16]

    def metadata(self) -> dict:
        return {"scenario": self.config, "scenario_hash": self.digest(),
                "seed": self.config["noise"]["seed"], "code_version": __version__,
                "kappa": self.kappa, "smallness": self.smallness,
                "separation": self.separation, "frequency_spread": self.frequency_spread,
                "warnings": self.warnings}


def default_scenario_dict() -> dict:
    """Two bubbles at -4 and 4 in d=1 with two noise modes and a small residue."""
    return {
        "name": "two-bubble-d1",
        "d": 1,
        "bubbles": [{"x": [-4.0], "w": 1.0, "theta": 0.0}, {"x": [4.0], "w": 1.0, "theta": 0.0}],
        "T": 1.0,
        "grid": {"L": 20.0, "N": 4096},
        "dt": 5e-5,
        "schedule": {"t_star": 0.5, "ratio": 0.75, "levels": 6, "samples_per_level": 20},
        "noise": {"count": 2, "upsilon": 5, "amplitude": 0.1, "width": 1.25, "seed": 20240607,
                  "path_dt": 0.005},
        "residue": {"m": 4, "alpha_star": 1e-3, "width": 1.25},
        "A": 20.0,
        "output": "runs/two-bubble-d1",
    }
