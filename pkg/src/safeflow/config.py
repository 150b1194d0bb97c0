"""Experiment configuration: YAML parsing, validation, defaults.

A config names a scenario and may override flow parameters, the observation,
or the whole constraint list.  Unknown keys are rejected with the path to
the offending key; every flow default comes from the scenario and can be
inspected with the ``validate-config`` CLI command.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, replace

import yaml

from safeflow.constraints import cone_constraint, halfspace, sphere_equality
from safeflow.experiments import SCENARIOS, Scenario
from safeflow.integrate import SafeFlowConfig


class ConfigError(ValueError):
    """Invalid configuration; message carries the path to the bad key."""


_TOP_KEYS = {"scenario", "output_dir", "flow", "model", "constraints"}
_FLOW_KEYS = {
    "alpha_g", "bandwidth", "kernel_convention", "dt", "horizon",
    "particles", "seed", "integrator", "snapshot_every", "workers", "tol_qp",
}
_MODEL_KEYS = {"noisy_observation", "observation_seed"}
_CONSTRAINT_TYPES = {
    "cone": ({"direction", "half_angle"}, lambda p: cone_constraint(p["direction"], p["half_angle"])),
    "sphere_equality": ({"radius"}, lambda p: sphere_equality(p["radius"])),
    "halfspace": ({"normal", "offset"}, lambda p: halfspace(p["normal"], p["offset"])),
}


def _reject_unknown(mapping: dict, allowed: set, path: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}: unknown key (allowed: {sorted(allowed)})")


def _build_constraints(entries, path: str):
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: expected a list of constraint mappings")
    out = []
    for i, entry in enumerate(entries):
        here = f"{path}[{i}]"
        if not isinstance(entry, dict) or "type" not in entry:
            raise ConfigError(f"{here}: each constraint needs a 'type' key")
        ctype = entry["type"]
        if ctype not in _CONSTRAINT_TYPES:
            raise ConfigError(
                f"{here}.type: unknown constraint name {ctype!r} "
                f"(known: {sorted(_CONSTRAINT_TYPES)})"
            )
        allowed, builder = _CONSTRAINT_TYPES[ctype]
        _reject_unknown({k: v for k, v in entry.items() if k != "type"}, allowed, here)
        missing = allowed - set(entry)
        if missing:
            raise ConfigError(f"{here}.{sorted(missing)[0]}: missing required key for {ctype!r}")
        try:
            out.append(builder(entry))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{here}: {exc}") from exc
    return tuple(out)


def load_config(path: str) -> dict:
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return raw


def resolve(raw: dict) -> tuple[Scenario, SafeFlowConfig, str | None]:
    """Validate a raw config mapping into (scenario, flow config, output dir)."""
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "scenario" not in raw:
        raise ConfigError("config.scenario: missing required key")
    name = raw["scenario"]
    if name not in SCENARIOS:
        raise ConfigError(f"config.scenario: unknown scenario {name!r} (known: {sorted(SCENARIOS)})")

    model_overrides = raw.get("model", {})
    _reject_unknown(model_overrides, _MODEL_KEYS, "config.model")
    try:
        scenario = SCENARIOS[name](**model_overrides)
    except TypeError as exc:
        raise ConfigError(f"config.model: {exc}") from exc

    flow_overrides = raw.get("flow", {})
    _reject_unknown(flow_overrides, _FLOW_KEYS, "config.flow")
    try:
        flow = replace(scenario.config, **flow_overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config.flow: {exc}") from exc

    if "constraints" in raw:
        scenario = replace(
            scenario,
            constraints=_build_constraints(raw["constraints"], "config.constraints"),
            constraints_overridden=True,
        )

    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("config.output_dir: expected a string path")
    return scenario, flow, output_dir


def parse_config(path: str) -> tuple[Scenario, SafeFlowConfig, str | None]:
    """Read and validate a YAML config file."""
    return resolve(load_config(path))


def describe(scenario: Scenario, flow: SafeFlowConfig) -> str:
    """Fully resolved configuration, defaults included, as YAML."""
    doc = {
        "scenario": scenario.name,
        "description": scenario.description,
        "flow": asdict(flow),
        "constraints": [c.label for c in scenario.constraints],
    }
    return yaml.safe_dump(doc, sort_keys=True)


def config_hash(scenario: Scenario, flow: SafeFlowConfig) -> str:
    """Stable hash of the resolved configuration."""
    doc = {
        "scenario": scenario.name,
        "flow": asdict(flow),
        "constraints": [c.label for c in scenario.constraints],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
