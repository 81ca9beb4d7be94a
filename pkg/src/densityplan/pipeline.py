"""End-to-end orchestration: game, prediction, synthesis, evaluation, artifacts.

A run consumes one scenario and produces a directory containing a
machine-readable report, per-stage density dumps (CSV plus grayscale PGM
images), the synthesized policy and occupancy, and a manifest. Reports are
byte-identical across runs of the same scenario; wall-clock data lives only
in the manifest.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import observer
from .deception import (MODE_AMBIGUITY, MODE_EXAGGERATION, DeceptionSpec,
                        choose_switch_time, goal_directed_occupancy,
                        synthesize_ambiguity, synthesize_exaggeration)
from .errors import DensityPlanError, ValidationError
from .game import UtilityMatrix, best_response_value, \
    max_entropy_equilibrium, solve_zero_sum
from .mdp import (ExtendedMdp, Mdp, StatePartition, build_extended_mdp,
                  build_grid_mdp, expected_state_density,
                  occupancy_from_policy, partition_states,
                  reach_probabilities)
from .prediction import PredictionResult, PredictionSpec, min_expected_time, \
    predict_policy
from .scenario import CostTable, Scenario

STAGES = ("solve-game", "predict", "synthesize", "evaluate")


@dataclass(eq=False)
class PipelineResult:
    scenario: Scenario
    mdp: Mdp
    partition: StatePartition
    games: list
    predictions: list
    t_min: float | None
    switch_time: int | None
    ext: ExtendedMdp | None
    synthesis: object | None
    evaluation: dict | None
    report: dict
    out_dir: Path


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def write_report(report: dict, path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    return path


def write_heatmap(density: Mapping, width: int, height: int, obstacles,
                  out_base) -> tuple[Path, Path]:
    """Dump a per-cell density as CSV plus a max-normalized grayscale PGM.

    The CSV holds raw values with obstacles at the sentinel -1. In the
    image, densities scale to 0..254 and obstacles render at 255.
    """
    out_base = Path(out_base)
    obstacles = {tuple(c) for c in obstacles}
    for value in density.values():
        if value < 0:
            raise ValidationError("densities must be nonnegative")

    csv_path = out_base.with_suffix(".csv")
    lines = ["row,col,value"]
    for row in range(height):
        for col in range(width):
            if (col, row) in obstacles:
                lines.append(f"{row},{col},-1")
            else:
                lines.append(f"{row},{col},{density.get((col, row), 0.0):.17g}")
    csv_path.write_text("\n".join(lines) + "\n")

    peak = max(density.values(), default=0.0)
    pgm_path = out_base.with_suffix(".pgm")
    pixel_rows = []
    for row in range(height - 1, -1, -1):  # image rows run top to bottom
        pixels = []
        for col in range(width):
            if (col, row) in obstacles:
                pixels.append(255)
            elif peak > 0:
                pixels.append(int(round(254 * density.get((col, row), 0.0) / peak)))
            else:
                pixels.append(0)
        pixel_rows.append(" ".join(str(p) for p in pixels))
    pgm_path.write_text(f"P2\n{width} {height}\n255\n" + "\n".join(pixel_rows) + "\n")
    return csv_path, pgm_path


def _density_entropy(density: np.ndarray) -> float:
    total = float(density.sum())
    if total <= 0:
        return 0.0
    p = density[density > 0] / total
    return float(-(p * np.log(p)).sum())


def _density_map(mdp: Mdp, values: np.ndarray) -> dict:
    return {mdp.labels[s]: float(values[s]) for s in range(mdp.n_states)}


def _score_block(x_phase, policy, lifted, true_idx, epsilon):
    exagg = observer.deceptiveness_exaggeration(x_phase, policy, lifted,
                                                true_idx, epsilon)
    ambig = observer.deceptiveness_ambiguity(x_phase, policy, lifted, epsilon)
    return {
        "kl": list(exagg.kl),
        "relative_log_likelihood": list(exagg.relative_log_likelihood),
        "exaggeration_score": exagg.exaggeration_score,
        "ambiguity_score": ambig.ambiguity_score,
        "most_likely": f"U{exagg.most_likely + 1}",
    }


def run_pipeline(scenario: Scenario, out_dir, mode: str | None = None,
                 seed: int | None = None, tol: float | None = None,
                 stop_after: str = "evaluate") -> PipelineResult:
    """Run the scenario end to end and write artifacts into ``out_dir``.

    ``stop_after`` truncates the pipeline after one of ``STAGES``. On
    failure a manifest naming the failed stage (and failed check, if any)
    is written before the error propagates.
    """
    if stop_after not in STAGES:
        raise ValidationError(f"stop_after must be one of {STAGES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = mode or scenario.mode
    if mode not in (MODE_EXAGGERATION, MODE_AMBIGUITY):
        raise ValidationError(f"unknown mode {mode!r}")
    seed = scenario.seed if seed is None else seed
    tol = scenario.tolerance if tol is None else tol

    if isinstance(scenario.cost, CostTable):
        cost_param = {"default": scenario.cost.default,
                      "overrides": [[list(c), a, v]
                                    for c, a, v in scenario.cost.overrides]}
    else:
        cost_param = scenario.cost
    report: dict = {
        "schema": 1,
        "mode": mode,
        "seed": seed,
        "tolerance": tol,
        "parameters": {
            "beta": scenario.beta,
            "cost": cost_param,
            "epsilon": scenario.epsilon,
            "true_index": scenario.true_index + 1,
        },
        "artifacts": [],
    }
    result = PipelineResult(scenario=scenario, mdp=None, partition=None,
                            games=[], predictions=[], t_min=None,
                            switch_time=None, ext=None, synthesis=None,
                            evaluation=None, report=report, out_dir=out_dir)
    started = time.perf_counter()
    stage = "solve-game"
    try:
        mdp, partition = build_grid_mdp(
            scenario.width, scenario.height, scenario.obstacles,
            scenario.start_distribution(), scenario.goals)
        result.mdp, result.partition = mdp, partition

        games = []
        for i, entries in enumerate(scenario.utilities):
            u = UtilityMatrix(entries=entries, goals=scenario.goals)
            solution = solve_zero_sum(u, tol=tol)
            sigma1 = max_entropy_equilibrium(u, solution.value, 1)
            sigma2 = max_entropy_equilibrium(u, solution.value, 2)
            games.append({"utility": u, "value": solution.value,
                          "sigma1": sigma1, "sigma2": sigma2})
        result.games = games
        report["game"] = [{
            "matrix": f"U{i + 1}",
            "value": g["value"],
            "sigma1": g["sigma1"].weights,
            "sigma2": g["sigma2"].weights,
            "security_gap": best_response_value(g["utility"], g["sigma1"], 1)
            - best_response_value(g["utility"], g["sigma2"], 2),
        } for i, g in enumerate(games)]
        if stop_after == "solve-game":
            return _finalize(result, started)

        stage = "predict"
        predictions: list[PredictionResult] = []
        report["prediction"] = []
        cost = (scenario.cost.as_mapping(mdp)
                if isinstance(scenario.cost, CostTable) else scenario.cost)
        for i, g in enumerate(games):
            spec = PredictionSpec(mdp=mdp, partition=partition,
                                  target=g["sigma1"], cost=cost,
                                  beta=scenario.beta)
            pred = predict_policy(spec, tol=tol)
            predictions.append(pred)
            density = pred.occupancy.nu()
            reach = reach_probabilities(mdp, pred.policy, partition)
            csv_path, pgm_path = write_heatmap(
                _density_map(mdp, density), scenario.width, scenario.height,
                scenario.obstacles, out_dir / f"prediction_U{i + 1}")
            report["artifacts"] += [csv_path.name, pgm_path.name]
            report["prediction"].append({
                "matrix": f"U{i + 1}",
                "objective": pred.objective,
                "reach": reach,
                "reach_residual": float(np.max(np.abs(reach - g["sigma1"].weights))),
                "density_entropy": _density_entropy(density),
                "solver": pred.report.stats(),
            })
        result.predictions = predictions
        if stop_after == "predict":
            return _finalize(result, started)

        stage = "synthesize"
        true_idx = scenario.true_index
        target = games[true_idx]["sigma1"]
        t_min = min_expected_time(mdp, partition, target, tol=tol)
        if scenario.switch_time is not None:
            switch_time = scenario.switch_time
        else:
            switch_time = choose_switch_time(scenario.switch_multiple, t_min)
        result.t_min, result.switch_time = t_min, switch_time
        report["t_min"] = t_min
        report["switch_time"] = switch_time

        ext = build_extended_mdp(mdp, switch_time)
        result.ext = ext
        order = [true_idx] + [i for i in range(len(games)) if i != true_idx]
        spec = DeceptionSpec(
            ext=ext, partition=partition,
            predicted=tuple(predictions[i].policy for i in order),
            target=target, epsilon=scenario.epsilon, mode=mode)
        if mode == MODE_EXAGGERATION:
            synthesis = synthesize_exaggeration(spec, tol=tol)
            chosen = order[synthesis.chosen]
            report["synthesis"] = {
                "mode": mode,
                "values": {f"U{order[i] + 1}": v
                           for i, v in enumerate(synthesis.values)},
                "chosen": f"U{chosen + 1}",
                "tied": [f"U{order[i] + 1}" for i in synthesis.tied],
            }
        else:
            synthesis = synthesize_ambiguity(spec, tol=tol)
            report["synthesis"] = {
                "mode": mode,
                "ambiguity_level": synthesis.values[0],
            }
        result.synthesis = synthesis
        report["synthesis"]["tail_residence"] = synthesis.tail_residence
        report["synthesis"]["goal_inflow"] = synthesis.goal_inflow
        report["synthesis"]["solver"] = [r.stats() for r in synthesis.reports]

        density_full = expected_state_density(synthesis.occupancy, ext)
        phase_states = ext.deception_phase_states()
        x_phase = synthesis.occupancy.restrict(phase_states)
        density_phase = expected_state_density(x_phase, ext)
        for name, dens in (("synthesis_density", density_full),
                           ("synthesis_phase_density", density_phase)):
            csv_path, pgm_path = write_heatmap(
                _density_map(mdp, dens), scenario.width, scenario.height,
                scenario.obstacles, out_dir / name)
            report["artifacts"] += [csv_path.name, pgm_path.name]
        _dump_policy(synthesis, ext, out_dir / "policy.json")
        report["artifacts"].append("policy.json")
        if stop_after == "synthesize":
            return _finalize(result, started)

        stage = "evaluate"
        ext_goals = [(mdp.labels[g], switch_time + 1) for g in partition.goals]
        ext_partition = partition_states(ext.mdp, ext_goals)
        reach = reach_probabilities(ext.mdp, synthesis.policy, ext_partition)
        lifted = [ext.lift_policy(p.policy) for p in predictions]
        epsilon = scenario.epsilon

        gd_x, gd_policy, _ = goal_directed_occupancy(ext, partition, target, tol=tol)
        honest_policy = lifted[true_idx]
        honest_x = occupancy_from_policy(ext.mdp, honest_policy, ext_partition)

        evaluation = {
            "epsilon": epsilon,
            "reach": reach,
            "reach_residual": float(np.max(np.abs(reach - target.weights))),
            "synthesized": _score_block(x_phase, synthesis.policy, lifted,
                                        true_idx, epsilon),
            "goal_directed": _score_block(gd_x.restrict(phase_states), gd_policy,
                                          lifted, true_idx, epsilon),
            "honest": _score_block(honest_x.restrict(phase_states), honest_policy,
                                   lifted, true_idx, epsilon),
        }
        result.evaluation = evaluation
        report["evaluation"] = evaluation
        return _finalize(result, started)
    except DensityPlanError as exc:
        _write_manifest(result, started, failed_stage=stage, error=exc)
        raise


def _dump_policy(synthesis, ext: ExtendedMdp, path: Path):
    rows = {}
    flat = ext.mdp
    nu = synthesis.occupancy.nu()
    for idx in range(flat.n_states):
        if nu[idx] <= 1e-9:  # keep the dump to states actually visited
            continue
        label, layer = flat.labels[idx]
        rows[f"{label}@{layer}"] = {
            str(flat.actions[idx][a]): float(p)
            for a, p in enumerate(synthesis.policy.rows[idx])
        }
    path.write_text(json.dumps(_jsonable(rows), sort_keys=True, indent=2) + "\n")


def _write_manifest(result: PipelineResult, started: float,
                    failed_stage: str | None = None, error=None):
    manifest = {
        "status": "failed" if failed_stage else "ok",
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_seconds": time.perf_counter() - started,
        "artifacts": sorted(set(result.report.get("artifacts", []))
                            | ({"report.json"} if not failed_stage else set())),
    }
    if failed_stage:
        manifest["failed_stage"] = failed_stage
        manifest["error"] = str(error)
        check = getattr(error, "check", None)
        if check:
            manifest["failed_check"] = check
    (result.out_dir / "manifest.json").write_text(
        json.dumps(_jsonable(manifest), sort_keys=True, indent=2) + "\n")


def _finalize(result: PipelineResult, started: float) -> PipelineResult:
    result.report["artifacts"] = sorted(set(result.report["artifacts"]))
    write_report(result.report, result.out_dir / "report.json")
    _write_manifest(result, started)
    return result
