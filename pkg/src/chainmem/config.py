"""JSON experiment configuration.

A config is a JSON object::

    {
      "chain": {"model": "heisenberg", "n_a": 1, "n_c": 6, "n_b": 1,
                "coupling_range": [0.5, 1.5], "seed": 3},
      "schedule": {"tau": 1.0, "steps": 20},
      "input": "all_up",
      "analysis": {"tau_grid": {"start": 0.05, "stop": 6.0, "num": 120}},
      "sweep": {"seeds": [0, 1, 2], "lengths": [6], "n_b": [2]},
      "outputs": {"dir": "out"}
    }

The chain takes exactly one coupling source: ``couplings`` (explicit list),
``coupling_range`` plus ``seed`` (i.i.d. uniform), or ``preset`` (``"uniform"``
with optional ``coupling``, or ``"mirror"``). The schedule is one of
``{"tau", "steps"}``, ``{"taus"}``, ``{"tau", "survival_threshold"}`` (steps
set to the first ``j`` with ``Q_1(j)`` at or below the threshold), or
``{"optimize": {"steps", "tau_window", "grid_points"}}``, where
``tau_window`` may be ``"auto"``. Inputs are a preset name or a list of
``[ket, [re, im]]`` pairs. Kets are written in site order, site 0 first, so
``"10"`` means Alice's first spin is up.
"""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .hamiltonian import ChainSpec, mirror_chain, random_chain, uniform_chain
from .sectors import SiteLayout, ket_to_pattern

PRESET_INPUTS = ("all_up", "plus_state", "vacuum")
AUTO_NORMALIZE_TOL = 1e-9
REJECT_NORM_TOL = 1e-3


class NormalizationWarning(UserWarning):
    pass


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def chain(self) -> dict:
        return self.raw["chain"]

    @property
    def schedule(self) -> dict:
        return self.raw.get("schedule", {})

    @property
    def analysis(self) -> dict:
        return self.raw.get("analysis", {})

    @property
    def sweep(self) -> dict:
        return self.raw.get("sweep", {})

    @property
    def outputs(self) -> dict:
        return self.raw.get("outputs", {})

    def layout(self) -> SiteLayout:
        return _layout(self.chain)

    def chain_spec(self, **overrides) -> ChainSpec:
        chain = dict(self.chain)
        chain.update(overrides)
        return build_chain_spec(chain)

    def input_vector(self, layout: SiteLayout | None = None) -> np.ndarray:
        return parse_input(self.raw.get("input", "all_up"), layout or self.layout())

    def tau_grid(self) -> np.ndarray:
        return parse_tau_grid(self.analysis.get("tau_grid"))


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"missing '{key}' in {where}")
    return mapping[key]


def _layout(chain: dict) -> SiteLayout:
    try:
        return SiteLayout(int(_require(chain, "n_a", "chain")), int(_require(chain, "n_c", "chain")),
                          int(_require(chain, "n_b", "chain")))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad chain layout: {exc}") from exc


def build_chain_spec(chain: dict) -> ChainSpec:
    layout = _layout(chain)
    model = chain.get("model", "heisenberg")
    sources = [k for k in ("couplings", "coupling_range", "preset") if k in chain]
    if len(sources) != 1:
        raise ConfigError(f"chain needs exactly one coupling source, got {sources or 'none'}")
    try:
        if "couplings" in chain:
            spec = ChainSpec(layout, model, chain["couplings"], chain.get("fields"), chain.get("seed"))
        elif "coupling_range" in chain:
            if chain.get("seed") is None:
                raise ConfigError("coupling_range needs a seed")
            spec = random_chain(layout, model, chain["coupling_range"], int(chain["seed"]))
            if chain.get("fields") is not None:
                spec = ChainSpec(layout, model, spec.couplings, chain["fields"], spec.rng_seed)
        else:
            preset = chain["preset"]
            if preset == "uniform":
                spec = uniform_chain(layout, model, float(chain.get("coupling", 1.0)))
            elif preset == "mirror":
                spec = mirror_chain(layout, float(chain.get("coupling", 1.0)))
            else:
                raise ConfigError(f"unknown chain preset {preset!r}")
            if chain.get("fields") is not None:
                spec = ChainSpec(layout, spec.model, spec.couplings, chain["fields"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def parse_input(value, layout: SiteLayout) -> np.ndarray:
    dim = 1 << layout.n_a
    if isinstance(value, str):
        if value not in PRESET_INPUTS:
            raise ConfigError(f"unknown input preset {value!r}; expected one of {PRESET_INPUTS}")
        from .protocol import alice_state

        return alice_state(layout, value)
    if not isinstance(value, list) or not value:
        raise ConfigError("input must be a preset name or a list of [ket, [re, im]] pairs")
    psi = np.zeros(dim, dtype=complex)
    for entry in value:
        try:
            ket, amp = entry
            re, im = (float(x) for x in amp)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad input entry {entry!r}") from exc
        if not isinstance(ket, str) or len(ket) != layout.n_a:
            raise ConfigError(f"ket {ket!r} must be a string of {layout.n_a} bits")
        try:
            pattern = ket_to_pattern(ket)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        psi[pattern] += complex(re, im)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > REJECT_NORM_TOL:
        raise ConfigError(f"input norm {norm:.6g} is too far from 1")
    if abs(norm - 1.0) > AUTO_NORMALIZE_TOL:
        warnings.warn(f"input norm {norm:.12g}; normalizing", NormalizationWarning, stacklevel=2)
        psi = psi / norm
    return psi


def parse_tau_grid(value) -> np.ndarray:
    if value is None:
        raise ConfigError("analysis.tau_grid is required")
    if isinstance(value, dict):
        try:
            grid = np.linspace(float(value["start"]), float(value["stop"]), int(value["num"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad tau_grid {value!r}") from exc
    else:
        try:
            grid = np.asarray(value, dtype=float).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad tau_grid {value!r}") from exc
    if grid.size == 0:
        raise ConfigError("tau_grid is empty")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ConfigError("tau_grid values must be positive and finite")
    return grid


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read a config file, or the config echoed inside a run manifest."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and "manifest_version" in data:
        data = data.get("config")
    return from_dict(data, seed)


def from_dict(data, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = copy.deepcopy(data)
    if "chain" not in data or not isinstance(data["chain"], dict):
        raise ConfigError("config needs a 'chain' object")
    if seed is not None:
        data["chain"]["seed"] = int(seed)
    config = ExperimentConfig(data)
    config.chain_spec()  # validate eagerly
    if "input" in data:
        config.input_vector()
    return config
