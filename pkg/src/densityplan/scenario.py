"""Scenario files: the single input artifact of the command-line pipeline.

A scenario is one JSON document (schema version 1) describing the grid, the
candidate utility matrices with the true index, the adversary model
parameters, the switch-time rule, and run settings. Validation collects
every problem it finds instead of stopping at the first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ScenarioValidationError
from .deception import MODES

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CostTable:
    """Per-(cell, action) travel costs: a default plus sparse overrides."""

    default: float
    overrides: tuple[tuple[tuple[int, int], str, float], ...] = ()

    def as_mapping(self, mdp) -> dict:
        table = {(label, action): self.default
                 for s, label in enumerate(mdp.labels)
                 for action in mdp.actions[s]}
        for cell, action, value in self.overrides:
            if (cell, action) not in table:
                raise ScenarioValidationError(
                    [f"cost override targets missing state/action ({cell}, {action})"])
            table[(cell, action)] = value
        return table


@dataclass(frozen=True, eq=False)
class Scenario:
    width: int
    height: int
    obstacles: tuple[tuple[int, int], ...]
    start: tuple[tuple[tuple[int, int], float], ...]
    goals: tuple[tuple[int, int], ...]
    utilities: tuple[np.ndarray, ...]
    true_index: int  # zero-based
    beta: float
    cost: "float | CostTable"
    epsilon: float
    switch_time: int | None
    switch_multiple: int | None
    mode: str
    seed: int
    tolerance: float

    @property
    def n_candidates(self) -> int:
        return len(self.utilities)

    def start_distribution(self) -> dict:
        return {cell: p for cell, p in self.start}

    def with_mode(self, mode: str) -> "Scenario":
        if mode not in MODES:
            raise ScenarioValidationError([f"unknown mode {mode!r}"])
        return replace(self, mode=mode)


GRID_ACTION_NAMES = ("up", "down", "right", "left")


def _parse_cost_table(raw, issues):
    """Cost table form: {"default": c, "overrides": [[cell, action, value], ...]}."""
    default = raw.get("default")
    if not isinstance(default, (int, float)) or isinstance(default, bool) or default < 0:
        issues.append("cost.default must be a nonnegative number")
        default = 0.0
    overrides = []
    for i, entry in enumerate(raw.get("overrides", [])):
        if not (isinstance(entry, list) and len(entry) == 3):
            issues.append(f"cost.overrides[{i}] must be [cell, action, value]")
            continue
        cell = _as_cell(entry[0], f"cost.overrides[{i}].cell", issues)
        action, value = entry[1], entry[2]
        if action not in GRID_ACTION_NAMES:
            issues.append(f"cost.overrides[{i}] action must be one of "
                          f"{GRID_ACTION_NAMES}, got {action!r}")
            continue
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
            issues.append(f"cost.overrides[{i}] value must be a nonnegative number")
            continue
        if cell is not None:
            overrides.append((cell, action, float(value)))
    return CostTable(default=float(default), overrides=tuple(overrides))


def _as_cell(value, what, issues):
    if (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, int) for v in value)):
        return (value[0], value[1])
    issues.append(f"{what} must be a [col, row] pair of integers, got {value!r}")
    return None


def scenario_from_dict(data: Mapping) -> Scenario:
    """Validate a parsed JSON document; raises with every issue found."""
    issues: list[str] = []

    def fail():
        raise ScenarioValidationError(issues)

    if not isinstance(data, Mapping):
        issues.append("scenario document must be a JSON object")
        fail()
    if data.get("version") != SCHEMA_VERSION:
        issues.append(f"version must be {SCHEMA_VERSION}, got {data.get('version')!r}")

    grid = data.get("grid")
    width = height = 0
    obstacles: list = []
    goals: list = []
    start: list = []
    if not isinstance(grid, Mapping):
        issues.append("missing grid section")
    else:
        width = grid.get("width", 0)
        height = grid.get("height", 0)
        if not (isinstance(width, int) and isinstance(height, int)
                and width >= 1 and height >= 1):
            issues.append("grid width/height must be positive integers")
            width = height = 0

        for i, cell in enumerate(grid.get("obstacles", [])):
            c = _as_cell(cell, f"obstacles[{i}]", issues)
            if c is not None:
                obstacles.append(c)
        obstacle_set = set(obstacles)

        def in_bounds(cell):
            return 0 <= cell[0] < width and 0 <= cell[1] < height

        raw_goals = grid.get("goals")
        if not isinstance(raw_goals, list) or not raw_goals:
            issues.append("grid.goals must be a nonempty list of cells")
        else:
            for i, cell in enumerate(raw_goals):
                c = _as_cell(cell, f"goals[{i}]", issues)
                if c is None:
                    continue
                if width and not in_bounds(c):
                    issues.append(f"goal {c} is outside the grid")
                elif c in obstacle_set:
                    issues.append(f"goal {c} lies on an obstacle")
                else:
                    goals.append(c)
            if len(set(goals)) != len(goals):
                issues.append("duplicate goal cells")

        raw_start = grid.get("start")
        entries = []
        if isinstance(raw_start, list) and len(raw_start) == 2 \
                and all(isinstance(v, int) for v in raw_start):
            entries = [[raw_start, 1.0]]
        elif isinstance(raw_start, list):
            entries = raw_start
        else:
            issues.append("grid.start must be a cell or a list of [cell, prob] pairs")
        for i, entry in enumerate(entries):
            if not (isinstance(entry, list) and len(entry) == 2):
                issues.append(f"start[{i}] must be [cell, probability]")
                continue
            c = _as_cell(entry[0], f"start[{i}].cell", issues)
            if c is None:
                continue
            try:
                p = float(entry[1])
            except (TypeError, ValueError):
                issues.append(f"start[{i}] probability is not a number")
                continue
            if width and not in_bounds(c):
                issues.append(f"start cell {c} is outside the grid")
            elif c in obstacle_set:
                issues.append(f"start cell {c} lies on an obstacle")
            elif c in set(goals):
                issues.append(f"start cell {c} is a goal state")
            elif p <= 0:
                issues.append(f"start[{i}] probability must be positive")
            else:
                start.append((c, p))
        if start and abs(sum(p for _, p in start) - 1.0) > 1e-9:
            issues.append("start probabilities must sum to 1")
        if not start:
            issues.append("empty start distribution")

    utilities: list[np.ndarray] = []
    raw_utils = data.get("utilities")
    k = len(goals)
    if not isinstance(raw_utils, list) or not raw_utils:
        issues.append("utilities must be a nonempty list of square matrices")
    else:
        for i, raw in enumerate(raw_utils):
            try:
                mat = np.asarray(raw, dtype=float)
            except (TypeError, ValueError):
                issues.append(f"utilities[{i}] contains malformed numbers")
                continue
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                issues.append(f"utilities[{i}] is not square")
            elif k and mat.shape != (k, k):
                issues.append(
                    f"utilities[{i}] has shape {mat.shape[0]}x{mat.shape[1]}"
                    f" but there are {k} goals")
            elif not np.all(np.isfinite(mat)):
                issues.append(f"utilities[{i}] has non-finite entries")
            else:
                utilities.append(mat)

    true_index = data.get("true_index")
    if not (isinstance(true_index, int)
            and raw_utils and 1 <= true_index <= len(raw_utils)):
        issues.append("true_index must be in 1..N")
        true_index = 1

    def number(name, default=None, positive=False, nonnegative=False):
        value = data.get(name, default)
        if value is None:
            issues.append(f"missing field {name!r}")
            return 0.0
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            issues.append(f"{name} must be a number, got {value!r}")
            return 0.0
        value = float(value)
        if positive and value <= 0:
            issues.append(f"{name} must be positive")
        if nonnegative and value < 0:
            issues.append(f"{name} must be nonnegative")
        return value

    beta = number("beta", nonnegative=True)
    raw_cost = data.get("cost")
    if isinstance(raw_cost, Mapping):
        cost = _parse_cost_table(raw_cost, issues)
    else:
        cost = number("cost", nonnegative=True)
    epsilon = number("epsilon", default=1e-6, positive=True)
    tolerance = number("tolerance", default=1e-6, positive=True)

    switch_time = data.get("switch_time")
    switch_multiple = data.get("switch_multiple")
    if (switch_time is None) == (switch_multiple is None):
        issues.append("exactly one of switch_time / switch_multiple is required")
    if switch_time is not None and not (isinstance(switch_time, int) and switch_time >= 1):
        issues.append("switch_time must be a positive integer")
        switch_time = None
    if switch_multiple is not None and not (isinstance(switch_multiple, int)
                                            and switch_multiple >= 1):
        issues.append("switch_multiple must be a positive integer")
        switch_multiple = None

    mode = data.get("mode", "exaggeration")
    if mode not in MODES:
        issues.append(f"mode must be one of {MODES}, got {mode!r}")
        mode = "exaggeration"

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        issues.append("seed must be an integer")
        seed = 0

    if issues:
        fail()
    return Scenario(
        width=width, height=height, obstacles=tuple(obstacles),
        start=tuple(start), goals=tuple(goals),
        utilities=tuple(utilities), true_index=true_index - 1,
        beta=beta, cost=cost, epsilon=epsilon,
        switch_time=switch_time, switch_multiple=switch_multiple,
        mode=mode, seed=seed, tolerance=tolerance,
    )


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioValidationError([f"scenario file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioValidationError([f"invalid JSON: {exc}"]) from None
    return scenario_from_dict(data)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. 'grid10_beta1')."""
    ref = resources.files("densityplan") / "scenarios" / f"{name}.json"
    return Path(str(ref))
