"""Scenario files: YAML documents binding a topology, a power table, an attack and a grid.

Relative file paths are resolved against the scenario file's directory.
Presets shipped with the package live in ``ethpartition/data/presets``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .analysis import ExperimentGrid
from .attack import AttackSpec, ScenarioConfig, ScenarioError
from .chain import ChainError, HomesteadParams
from .mining import PowerError, load_power_distribution
from .netsim import TopologyError, load_topology


class ScenarioParseError(ValueError):
    """The scenario document is not well formed."""


PRESET_NAMES = (
    "public-table-II",
    "consortium-table-III",
    "consortium-250ms",
    "private-table-IV",
    "countermeasure-m40",
)


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("ethpartition").joinpath("data", *parts)))


def preset_path(name: str) -> Path:
    path = data_path("presets", f"{name}.yaml")
    if not path.exists():
        raise FileNotFoundError(f"no preset named {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return path


def resolve_scenario_path(ref: Union[str, Path]) -> Path:
    """A file path, or the name of a shipped preset."""
    path = Path(ref)
    if path.exists():
        return path
    if str(ref) in PRESET_NAMES:
        return preset_path(str(ref))
    raise FileNotFoundError(f"scenario file {ref} not found")


def _tuple(value: Any) -> Optional[Tuple[str, ...]]:
    if value is None:
        return None
    if not isinstance(value, list):
        raise ScenarioParseError(f"expected a list, got {value!r}")
    return tuple(str(v) for v in value)


def _durations(grid: Dict[str, Any], attack: Dict[str, Any]) -> Tuple[float, ...]:
    if "durations_min" in grid:
        return tuple(float(x) * 60 for x in grid["durations_min"])
    if "durations_s" in grid:
        return tuple(float(x) for x in grid["durations_s"])
    if "duration_min" in attack:
        return (float(attack["duration_min"]) * 60,)
    return (float(attack.get("duration_s", 420)),)


def parse_scenario(doc: Dict[str, Any], base_dir: Path) -> Tuple[ScenarioConfig, ExperimentGrid]:
    """Build the scenario and its grid from a parsed YAML mapping.

    Raises :class:`ScenarioParseError` for malformed documents and the
    owning module's error for invalid content (topology, powers, attack).
    """
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario must be a mapping")
    for key in ("topology", "power", "attack"):
        if key not in doc:
            raise ScenarioParseError(f"scenario is missing {key!r}")
    attack_doc = doc["attack"]
    grid_doc = doc.get("grid", {}) or {}
    if not isinstance(attack_doc, dict) or not isinstance(grid_doc, dict):
        raise ScenarioParseError("attack and grid must be mappings")
    try:
        durations = _durations(grid_doc, attack_doc)
        attack = AttackSpec(
            adversary=str(attack_doc["adversary"]),
            vector=str(attack_doc.get("vector", "bgp-hijack")),
            duration=durations[0],
            confirmations=int(attack_doc.get("confirmations", 12)),
            spend_fraction=float(attack_doc.get("spend_fraction", 0.6)),
            group_a=_tuple(attack_doc.get("group_a")),
            group_b=_tuple(attack_doc.get("group_b")),
            merchant=attack_doc.get("merchant"),
            probe_nodes=_tuple(attack_doc.get("probe_nodes")) or (),
            in_the_middle=bool(attack_doc.get("in_the_middle", True)),
            hijack_points=int(attack_doc.get("hijack_points", 1)),
            balance=int(attack_doc.get("balance", 1000)),
            split_strategy=str(attack_doc.get("split", "exhaustive")),
        )
        delays: List[Optional[float]] = [float(x) for x in grid_doc.get("delays_ms", [])] or [None]
        m_values = tuple(int(x) for x in grid_doc.get("m", [attack.confirmations]))
        trials = int(grid_doc.get("trials", 30))
        seed = int(grid_doc.get("seed", 0))
        adversaries = tuple(str(x) for x in grid_doc.get("adversaries", []))
    except KeyError as exc:
        raise ScenarioParseError(f"missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioParseError(str(exc)) from None

    topology = load_topology(base_dir / doc["topology"])
    distribution = load_power_distribution(base_dir / doc["power"])
    params = HomesteadParams.from_mapping(doc.get("homestead"))
    scenario = ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        topology=topology,
        distribution=distribution,
        attack=attack,
        initial_difficulty=int(doc.get("initial_difficulty", 4_200_000)),
        target_block_time=float(doc.get("target_block_time", 15)),
        params=params,
        warmup=float(doc.get("warmup", 1800)),
        quiescence_timeout=float(doc.get("quiescence_timeout", 600)),
        delay_ms=delays[0],
    )
    grid = ExperimentGrid(
        scenario=scenario,
        durations=durations,
        delays=tuple(delays),
        m_values=m_values,
        trials=trials,
        master_seed=seed,
        adversaries=adversaries,
    )
    return scenario, grid


def load_scenario(ref: Union[str, Path]) -> Tuple[ScenarioConfig, ExperimentGrid]:
    path = resolve_scenario_path(ref)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from None
    return parse_scenario(doc, path.parent)


CONTENT_ERRORS = (ScenarioError, TopologyError, PowerError, ChainError)
