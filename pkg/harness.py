#!/usr/bin/env python3
"""
Experiment harness: simulate, build datasets, train, tune, compare and run the
multiuser scaling study from one JSON configuration.

Usage:
    python harness.py simulate --config experiment.json --out results
    python harness.py compare --approaches LSTM-B LSTM-V GRU-B GRU-V --perfect
    python harness.py scale-study --users 2 3 4 5 6 --retrain
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (
    JOBS,
    OUTPUT_DIR,
    RDW_CONFIG,
    SCALE_STUDY_CONFIG,
    SIMULATION_CONFIG,
    SWEEP_ORDER,
    SWEEP_VALUES,
    TRAINING_CONFIG,
    VIRTUAL_MOTION_CONFIG,
    WINDOW_CONFIG,
    setup_logging,
)
from dataset import (
    FeatureVariant,
    Normalizer,
    WindowSpec,
    build_windows,
    fit_normalizer,
    save_dataset,
    save_targets_csv,
    split,
)
from errors import ConfigurationError, ModelNotFoundError, RdwSimError, ValidationError
from geometry import Room
from optimizers import OptimizerSpec
from rdw_engine import (
    RdwParams,
    SimulationResult,
    TraceFrame,
    initial_positions,
    load_trace_csv,
    reset_metrics,
    save_resets_csv,
    save_trace_csv,
    simulate,
)
from rnn_core import CellKind, RnnParameters, RnnSpec, load_checkpoint, save_checkpoint
from trainer import (
    NamedApproach,
    SeSummary,
    TrainingData,
    TrainReport,
    TrainSpec,
    approach_spec,
    evaluate,
    save_loss_csv,
    save_report,
    save_se_csv,
    squared_errors,
    sweep_samples,
    sweep_table,
    train_on,
    tune,
)
from virtual_motion import VirtualMotionConfig, generate_all

logger = logging.getLogger(__name__)

PERFECT = "Perfect"
MODELS_DIR = "models"
STUDY_APPROACHES = [a.value for a in NamedApproach if not a.is_initial]


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class SimConfig:
    room_side: float = SIMULATION_CONFIG["room_side"]
    tick_rate: float = SIMULATION_CONFIG["tick_rate"]
    duration: float = SIMULATION_CONFIG["duration"]
    users: int = SIMULATION_CONFIG["users"]
    seed: int = SIMULATION_CONFIG["seed"]

    def violations(self) -> List[str]:
        problems = []
        for name in ("room_side", "tick_rate", "duration"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0 (got {getattr(self, name)})")
        if not (isinstance(self.users, int) and self.users >= 1):
            problems.append(f"users must be an integer >= 1 (got {self.users!r})")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            problems.append(f"seed must be a non-negative integer (got {self.seed!r})")
        return problems


@dataclass(frozen=True)
class TrainingConfig:
    train_fraction: float = TRAINING_CONFIG["train_fraction"]
    normalizer_mode: str = TRAINING_CONFIG["normalizer_mode"]
    seed: int = TRAINING_CONFIG["seed"]
    approaches: List[str] = field(default_factory=lambda: list(TRAINING_CONFIG["approaches"]))
    influence_threshold: float = TRAINING_CONFIG["influence_threshold"]
    tune_cell: str = TRAINING_CONFIG["tune_cell"]
    tune_variant: str = TRAINING_CONFIG["tune_variant"]
    axes: List[str] = field(default_factory=lambda: list(SWEEP_ORDER))
    sweep_values: Dict[str, list] = field(default_factory=lambda: dict(SWEEP_VALUES))

    def violations(self) -> List[str]:
        problems = []
        if not 0.0 < self.train_fraction < 1.0:
            problems.append(f"train_fraction must lie in (0, 1) (got {self.train_fraction})")
        if self.normalizer_mode not in ("room", "minmax"):
            problems.append(f"normalizer_mode {self.normalizer_mode!r} not in ('room', 'minmax')")
        known = [a.value for a in NamedApproach] + [PERFECT]
        for name in self.approaches:
            if name not in known:
                problems.append(f"unknown approach {name!r}")
        if self.tune_cell not in [c.value for c in CellKind]:
            problems.append(f"tune_cell {self.tune_cell!r} is not a cell type")
        if self.tune_variant not in [v.value for v in FeatureVariant]:
            problems.append(f"tune_variant {self.tune_variant!r} is not a feature variant")
        for axis in self.axes:
            if not self.sweep_values.get(axis):
                problems.append(f"axis {axis!r} has no sweep values")
        return problems


@dataclass(frozen=True)
class ScaleStudyConfig:
    user_counts: List[int] = field(default_factory=lambda: list(SCALE_STUDY_CONFIG["user_counts"]))
    approaches: List[str] = field(default_factory=lambda: list(SCALE_STUDY_CONFIG["approaches"]))

    def violations(self) -> List[str]:
        problems = [f"user count {n!r} must be an integer >= 1" for n in self.user_counts
                    if not (isinstance(n, int) and n >= 1)]
        problems += [f"approach {a!r} has no two-user checkpoint to study" for a in self.approaches
                     if a not in STUDY_APPROACHES]
        return problems


@dataclass(frozen=True)
class ExperimentConfig:
    simulation: SimConfig
    virtual_motion: VirtualMotionConfig
    rdw: RdwParams
    window: WindowSpec
    training: TrainingConfig
    scale_study: ScaleStudyConfig
    output_dir: str = OUTPUT_DIR
    jobs: int = 1

    def motion(self, seed: Optional[int] = None) -> VirtualMotionConfig:
        return replace(self.virtual_motion, seed=self.simulation.seed if seed is None else seed)

    def to_dict(self) -> Dict[str, Any]:
        motion = asdict(self.virtual_motion)
        for key in ("seed", "tick_rate", "duration"):
            motion.pop(key)
        return {
            "simulation": asdict(self.simulation),
            "virtual_motion": motion,
            "rdw": asdict(self.rdw),
            "window": asdict(self.window),
            "training": asdict(self.training),
            "scale_study": asdict(self.scale_study),
            "output_dir": self.output_dir,
            "jobs": self.jobs,
        }


def _coerce_jobs(value: Any) -> Any:
    """Integer strings (RDW_JOBS) become ints; anything else is left for validation"""
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            return value
    return value


def build_config(raw: Dict[str, Any], seed: Optional[int] = None, out: Optional[str] = None,
                 jobs: Optional[int] = None) -> ExperimentConfig:
    """Merge a raw document over the defaults and validate; every violation is reported"""
    problems: List[str] = []
    sections = {
        "simulation": SIMULATION_CONFIG,
        "virtual_motion": VIRTUAL_MOTION_CONFIG,
        "rdw": RDW_CONFIG,
        "window": WINDOW_CONFIG,
        "training": asdict(TrainingConfig()),
        "scale_study": SCALE_STUDY_CONFIG,
    }
    for key in raw:
        if key not in sections and key not in ("output_dir", "jobs"):
            problems.append(f"{key}: unknown section")

    merged = {}
    for name, defaults in sections.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            problems.append(f"{name}: expected an object, got {type(data).__name__}")
            data = {}
        problems += [f"{name}.{key}: unknown key" for key in data if key not in defaults]
        merged[name] = {**defaults, **{k: v for k, v in data.items() if k in defaults}}
    if seed is not None:
        merged["simulation"]["seed"] = seed

    sim = SimConfig(**merged["simulation"])
    cfg = ExperimentConfig(
        simulation=sim,
        virtual_motion=VirtualMotionConfig(seed=sim.seed, tick_rate=sim.tick_rate, duration=sim.duration,
                                           **merged["virtual_motion"]),
        rdw=RdwParams(**merged["rdw"]),
        window=WindowSpec(**merged["window"]),
        training=TrainingConfig(**merged["training"]),
        scale_study=ScaleStudyConfig(**merged["scale_study"]),
        output_dir=out or raw.get("output_dir", OUTPUT_DIR),
        jobs=_coerce_jobs(jobs if jobs is not None else raw.get("jobs", JOBS)),
    )

    checks = [("simulation", cfg.simulation), ("virtual_motion", cfg.virtual_motion), ("rdw", cfg.rdw),
              ("window", cfg.window), ("training", cfg.training), ("scale_study", cfg.scale_study)]
    for name, section in checks:
        try:
            problems += [f"{name}: {p}" for p in section.violations()]
        except TypeError as e:
            problems.append(f"{name}: value of the wrong type ({e})")
    if not (isinstance(cfg.jobs, int) and cfg.jobs >= 1):
        problems.append(f"jobs must be an integer >= 1 (got {cfg.jobs!r})")
    if problems:
        raise ValidationError(problems)
    return cfg


def load_config(path: Optional[str] = None, seed: Optional[int] = None, out: Optional[str] = None,
                jobs: Optional[int] = None) -> ExperimentConfig:
    """Read a config file, or the config echoed in a run manifest"""
    raw: Dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValidationError([f"{path}: not valid JSON ({e})"])
        if "command" in raw and "config" in raw:
            raw = raw["config"]
    return build_config(raw, seed=seed, out=out, jobs=jobs)


# =============================================================================
# Shared steps
# =============================================================================

def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, artifacts: Sequence[Path],
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": {"simulation": cfg.simulation.seed, "training": cfg.training.seed},
        "artifacts": {Path(p).relative_to(out_dir).as_posix(): file_sha256(p) for p in sorted(artifacts)},
        **(extra or {}),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def machine_stamp() -> Dict[str, Any]:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def _prepare_out(cfg: ExperimentConfig, command: str) -> Path:
    out_dir = Path(cfg.output_dir) / command
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def run_simulation(cfg: ExperimentConfig, users: Optional[int] = None) -> Tuple[SimulationResult, float]:
    """Generate virtual paths and steer them; returns the result and wall-clock seconds"""
    users = users or cfg.simulation.users
    room = Room(cfg.simulation.room_side)
    trajectories = generate_all(cfg.motion(), users)
    started = time.perf_counter()
    result = simulate(trajectories, room, cfg.rdw, initial_positions(room, users))
    return result, time.perf_counter() - started


def _frames(cfg: ExperimentConfig, trace: Optional[str]) -> Tuple[List[TraceFrame], float]:
    if trace:
        logger.info("reading trace %s", trace)
        return load_trace_csv(trace), 0.0
    result, seconds = run_simulation(cfg)
    return result.frames, seconds


def prepare_data(cfg: ExperimentConfig, frames: Sequence[TraceFrame], variant: FeatureVariant,
                 normalizer: Optional[Normalizer] = None) -> Tuple[TrainingData, int]:
    """Windows, chronological split and (unless given) a normalizer fitted on the train side"""
    windows = build_windows(frames, cfg.window, variant)
    parts = split(windows, cfg.training.train_fraction, cfg.training.seed)
    if normalizer is None:
        normalizer = fit_normalizer(parts.train, cfg.training.normalizer_mode, cfg.window.frame,
                                    cfg.simulation.room_side)
    return TrainingData(parts.train, parts.test, normalizer), parts.dropped


def spec_from_dict(data: Dict[str, Any], rnn: RnnSpec) -> TrainSpec:
    return TrainSpec(
        rnn=rnn,
        optimizer=OptimizerSpec.for_kind(data["optimizer"], learning_rate=data["learning_rate"]),
        batch_size=int(data["batch"]),
        epochs=int(data["epochs"]),
        seed=int(data["seed"]),
        variant=FeatureVariant(data["variant"]),
        label=data["label"],
    )


class SavedModel(NamedTuple):
    spec: TrainSpec
    params: RnnParameters
    normalizer: Normalizer
    users: Optional[int]
    seed: Optional[int]
    window: Optional[Dict[str, Any]]


def save_model(path: Path, spec: TrainSpec, params: RnnParameters, normalizer: Normalizer,
               window: WindowSpec, users: int, seed: int) -> None:
    """Checkpoint plus the scenario it was trained on (user count, simulation seed, windowing)"""
    save_checkpoint(path, spec.rnn, params, extra={
        "train_spec": spec.to_dict(),
        "normalizer": normalizer.to_dict(),
        "window_spec": asdict(window),
        "users": users,
        "seed": seed,
    })


def load_model(path: Path) -> SavedModel:
    rnn, params, extra = load_checkpoint(path)
    return SavedModel(spec=spec_from_dict(extra["train_spec"], rnn), params=params,
                      normalizer=Normalizer.from_dict(extra["normalizer"]),
                      users=extra.get("users"), seed=extra.get("seed"), window=extra.get("window_spec"))


def resolve_spec(cfg: ExperimentConfig, approach: str, cell: Optional[str] = None) -> TrainSpec:
    """TrainSpec for a named column under this config; every Initial column uses
    training.tune_variant, and the bare Initial column also takes training.tune_cell"""
    named = NamedApproach(approach)
    if not named.is_initial:
        return approach_spec(named, seed=cfg.training.seed)
    if cell is None and named.cell is None:
        cell = cfg.training.tune_cell
    return approach_spec(named, cell=CellKind(cell) if cell else None,
                         variant=FeatureVariant(cfg.training.tune_variant), seed=cfg.training.seed)


def perfect_report(test_windows) -> TrainReport:
    """Control that predicts every target exactly"""
    targets = np.stack([w.target for w in test_windows])
    se = squared_errors(targets, test_windows)
    return TrainReport(label=PERFECT, spec={"label": PERFECT}, epoch_losses=[], optimizer_steps=0,
                       training_seconds=0.0, train_size=0,
                       test_users=[w.user for w in test_windows], test_ticks=[w.t for w in test_windows],
                       test_se=[float(v) for v in se])


def quantile_row(label: str, summary: SeSummary) -> Dict[str, Any]:
    return {"approach": label, **summary._asdict()}


def _train_all(specs: Sequence[TrainSpec], datas: Sequence[TrainingData], jobs: int):
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(train_on, specs, datas))
    return [train_on(spec, data) for spec, data in zip(specs, datas)]


# =============================================================================
# Commands
# =============================================================================

def cmd_simulate(cfg: ExperimentConfig) -> Path:
    out_dir = _prepare_out(cfg, "simulate")
    result, seconds = run_simulation(cfg)
    trace_path, resets_path = out_dir / "trace.csv", out_dir / "resets.csv"
    save_trace_csv(result.frames, trace_path)
    save_resets_csv(result.events, resets_path)
    (out_dir / "timing.json").write_text(json.dumps(
        {"simulation_seconds": seconds, "machine": machine_stamp()}, indent=2))
    write_manifest(out_dir, "simulate", cfg, [trace_path, resets_path])
    print(f"✅ {len(result.frames)} trace rows, {len(result.events)} resets -> {out_dir}")
    return out_dir


def cmd_build_dataset(cfg: ExperimentConfig, trace: Optional[str] = None) -> Path:
    out_dir = _prepare_out(cfg, "dataset")
    frames, _ = _frames(cfg, trace)
    artifacts, dropped = [], {}
    for variant in FeatureVariant:
        data, dropped[variant.value] = prepare_data(cfg, frames, variant)
        stem = variant.value.lower()
        for side, windows in (("train", data.train), ("test", data.test)):
            dataset_path = out_dir / f"{stem}_{side}.json"
            targets_path = out_dir / f"{stem}_{side}_targets.csv"
            save_dataset(dataset_path, windows, cfg.window, variant, data.normalizer)
            save_targets_csv(targets_path, windows)
            artifacts += [dataset_path, targets_path]
        print(f"✅ {variant.value}: {len(data.train)} train / {len(data.test)} test windows "
              f"({dropped[variant.value]} dropped at the split)")
    write_manifest(out_dir, "build-dataset", cfg, artifacts, {"dropped_windows": dropped})
    return out_dir


def cmd_train(cfg: ExperimentConfig, approach: str, cell: Optional[str] = None,
              trace: Optional[str] = None) -> Path:
    spec = resolve_spec(cfg, approach, cell=cell)
    out_dir = _prepare_out(cfg, f"train/{spec.label}")
    frames, _ = _frames(cfg, trace)
    data, _ = prepare_data(cfg, frames, spec.variant)
    params, report = train_on(spec, data)

    paths = [out_dir / "report.json", out_dir / "loss.csv", out_dir / "se.csv", out_dir / "model.json"]
    save_report(paths[0], report, include_timing=False)
    save_loss_csv(paths[1], report)
    save_se_csv(paths[2], report)
    save_model(paths[3], spec, params, data.normalizer, cfg.window,
               users=cfg.simulation.users, seed=cfg.simulation.seed)
    (out_dir / "timing.json").write_text(json.dumps(
        {"training_seconds": report.training_seconds, "machine": machine_stamp()}, indent=2))
    write_manifest(out_dir, "train", cfg, paths, {"approach": spec.label})
    print(f"✅ {spec.label}: mean test SE {report.summary.mean:.3e} m^2 in {report.training_seconds:.1f} s")
    return out_dir


def cmd_tune(cfg: ExperimentConfig, axes: Optional[Sequence[str]] = None, trace: Optional[str] = None,
             runner=train_on) -> Path:
    out_dir = _prepare_out(cfg, "tune")
    axes = list(axes or cfg.training.axes)
    base = resolve_spec(cfg, NamedApproach.INITIAL.value)
    frames, _ = _frames(cfg, trace)
    data, _ = prepare_data(cfg, frames, base.variant)
    result = tune(base, data, axes, cfg.training.sweep_values, runner=runner, jobs=cfg.jobs)

    artifacts = []
    for sweep in result.sweeps:
        table_path = out_dir / f"sweep_{sweep.axis}.csv"
        samples_path = out_dir / f"sweep_{sweep.axis}_se.csv"
        sweep_table(sweep).to_csv(table_path, index=False, float_format="%.9g")
        sweep_samples(sweep).to_csv(samples_path, index=False, float_format="%.9g")
        artifacts += [table_path, samples_path]
        flag = "influential" if sweep.influential else "not influential"
        print(f"✅ {sweep.axis}: best {sweep.best_value!r} ({flag}, {len(sweep.failures)} failed)")
        for entry in sweep.failures:
            print(f"⚠️  {sweep.axis}={entry.value!r}: {entry.error}")

    summary_path = out_dir / "tune.json"
    summary_path.write_text(json.dumps({
        "base": base.to_dict(),
        "best": result.best_spec.to_dict(),
        "axes": [{
            "axis": s.axis,
            "best_value": s.best_value,
            "ranking": s.ranking,
            "influential": s.influential,
            "failures": {str(e.value): e.error for e in s.failures},
        } for s in result.sweeps],
    }, indent=2))
    artifacts.append(summary_path)
    write_manifest(out_dir, "tune", cfg, artifacts)
    return out_dir


def cmd_compare(cfg: ExperimentConfig, approaches: Optional[Sequence[str]] = None, perfect: bool = False,
                trace: Optional[str] = None) -> Path:
    out_dir = _prepare_out(cfg, "compare")
    models_dir = Path(cfg.output_dir) / MODELS_DIR
    models_dir.mkdir(parents=True, exist_ok=True)
    names = list(approaches or cfg.training.approaches)
    if perfect and PERFECT not in names:
        names.append(PERFECT)

    frames, sim_seconds = _frames(cfg, trace)
    started = time.perf_counter()
    datas: Dict[FeatureVariant, TrainingData] = {}
    for variant in FeatureVariant:
        datas[variant], _ = prepare_data(cfg, frames, variant)

    specs = [resolve_spec(cfg, n) for n in names if n != PERFECT]
    duplicated = sorted({s.label for s in specs if [t.label for t in specs].count(s.label) > 1})
    if duplicated:
        raise ConfigurationError(f"approaches resolve to the same column: {', '.join(duplicated)}")
    trained = _train_all(specs, [datas[s.variant] for s in specs], cfg.jobs)
    results = {spec.label: report for spec, (_, report) in zip(specs, trained)}
    labels = [spec.label for spec in specs]
    if PERFECT in names:
        labels.append(PERFECT)
        results[PERFECT] = perfect_report(datas[FeatureVariant.BASELINE].test)
    prediction_seconds = time.perf_counter() - started

    artifacts, rows = [], []
    for spec, (params, _) in zip(specs, trained):
        model_path = models_dir / f"{spec.label}.json"
        save_model(model_path, spec, params, datas[spec.variant].normalizer, cfg.window,
                   users=cfg.simulation.users, seed=cfg.simulation.seed)
        print(f"✅ saved {model_path}")
    for label in labels:
        report = results[label]
        se_path = out_dir / f"se_{label}.csv"
        save_se_csv(se_path, report)
        artifacts.append(se_path)
        if report.epoch_losses:
            loss_path = out_dir / f"loss_{label}.csv"
            save_loss_csv(loss_path, report)
            artifacts.append(loss_path)
        rows.append(quantile_row(label, report.summary))
        print(f"✅ {label}: mean SE {report.summary.mean:.3e} m^2, median {report.summary.median:.3e} m^2")

    quantiles_path = out_dir / "quantiles.csv"
    pd.DataFrame(rows).to_csv(quantiles_path, index=False, float_format="%.9g")
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(
        {"approaches": [results[label].to_dict(include_timing=False) for label in labels]}, indent=2))
    artifacts += [quantiles_path, summary_path]

    (out_dir / "timing.json").write_text(json.dumps({
        "machine": machine_stamp(),
        "training_seconds": {label: r.training_seconds for label, r in results.items() if label != PERFECT},
        "simulation_seconds_without_prediction": sim_seconds,
        "simulation_seconds_with_prediction": sim_seconds + prediction_seconds,
    }, indent=2))
    write_manifest(out_dir, "compare", cfg, artifacts)
    return out_dir


@dataclass
class ScalePoint:
    users: int
    reset_counts: Dict[int, int]
    inter_reset_distances: Dict[int, List[float]]
    reports: Dict[str, TrainReport]


@dataclass
class ScaleStudyResult:
    points: List[ScalePoint]


def _scale_point(cfg: ExperimentConfig, users: int,
                 models: Dict[str, SavedModel]) -> ScalePoint:
    """Fresh simulation for one user count, evaluated with fixed models"""
    result, _ = run_simulation(cfg, users)
    metrics = reset_metrics(result.events, result.frames)
    reports = {}
    for label, model in models.items():
        spec = model.spec
        data, _ = prepare_data(cfg, result.frames, spec.variant, normalizer=model.normalizer)
        se, _ = evaluate(model.params, spec, data.test, model.normalizer)
        reports[label] = TrainReport(label=label, spec=spec.to_dict(), epoch_losses=[], optimizer_steps=0,
                                     training_seconds=0.0, train_size=0,
                                     test_users=[w.user for w in data.test], test_ticks=[w.t for w in data.test],
                                     test_se=[float(v) for v in se])
    return ScalePoint(users=users,
                      reset_counts={u: m.reset_count for u, m in metrics.items()},
                      inter_reset_distances={u: m.inter_reset_distances for u, m in metrics.items()},
                      reports=reports)


def _scale_models(cfg: ExperimentConfig, approaches: Sequence[str], retrain: bool):
    models_dir = Path(cfg.output_dir) / MODELS_DIR
    missing = [a for a in approaches if not (models_dir / f"{a}.json").exists()]
    if missing and not retrain:
        raise ModelNotFoundError(
            f"no trained model for {', '.join(missing)} in {models_dir}; run "
            f"`harness.py compare --approaches {' '.join(missing)}` on the two-user scenario first, "
            f"or pass --retrain")
    if missing:
        two_user = replace(cfg, simulation=replace(cfg.simulation, users=2))
        cmd_compare(two_user, approaches=missing)
    models = {a: load_model(models_dir / f"{a}.json") for a in approaches}
    problems = []
    for name, model in models.items():
        if model.users != 2:
            problems.append(f"{name} was trained on {model.users!r} users, not the two-user scenario")
        if model.window != asdict(cfg.window):
            problems.append(f"{name} was trained on windows {model.window!r}, "
                            f"this study cuts {asdict(cfg.window)!r}")
    if problems:
        raise ValidationError(problems)
    return models


def run_scale_study(cfg: ExperimentConfig, user_counts: Sequence[int], approaches: Sequence[str],
                    retrain: bool = False) -> ScaleStudyResult:
    models = _scale_models(cfg, approaches, retrain)
    if cfg.jobs > 1 and len(user_counts) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            points = list(pool.map(_scale_point, [cfg] * len(user_counts), user_counts,
                                   [models] * len(user_counts)))
    else:
        points = [_scale_point(cfg, n, models) for n in user_counts]
    return ScaleStudyResult(points)


def cmd_scale_study(cfg: ExperimentConfig, user_counts: Optional[Sequence[int]] = None,
                    approaches: Optional[Sequence[str]] = None, retrain: bool = False) -> ScaleStudyResult:
    user_counts = list(user_counts or cfg.scale_study.user_counts)
    approaches = list(approaches or cfg.scale_study.approaches)
    study = run_scale_study(cfg, user_counts, approaches, retrain)
    out_dir = _prepare_out(cfg, "scale-study")

    resets, distances, samples, summary = [], [], [], []
    for point in study.points:
        for user, count in point.reset_counts.items():
            gaps = point.inter_reset_distances[user]
            resets.append({"users": point.users, "user": user, "reset_count": count,
                           "mean_inter_reset_distance": float(np.mean(gaps)) if gaps else float("nan")})
            distances += [{"users": point.users, "user": user, "distance": d} for d in gaps]
        entry = {
            "users": point.users,
            "mean_reset_count": float(np.mean(list(point.reset_counts.values()))),
            "approaches": {},
        }
        for label, report in point.reports.items():
            samples.append(pd.DataFrame({"users": point.users, "approach": label, "user": report.test_users,
                                         "tick": report.test_ticks, "se": report.test_se}))
            entry["approaches"][label] = report.to_dict(include_timing=False)["summary"]
        summary.append(entry)
        print(f"✅ {point.users} users: mean resets {entry['mean_reset_count']:.1f}, " + ", ".join(
            f"{label} mean SE {report.summary.mean:.3e} m^2" for label, report in point.reports.items()))

    paths = [out_dir / name for name in ("resets.csv", "distances.csv", "se.csv", "summary.json")]
    pd.DataFrame(resets, columns=["users", "user", "reset_count", "mean_inter_reset_distance"]).to_csv(
        paths[0], index=False, float_format="%.9g")
    pd.DataFrame(distances, columns=["users", "user", "distance"]).to_csv(paths[1], index=False, float_format="%.9g")
    se_table = pd.concat(samples, ignore_index=True) if samples else pd.DataFrame(
        columns=["users", "approach", "user", "tick", "se"])
    se_table.to_csv(paths[2], index=False, float_format="%.9g")
    paths[3].write_text(json.dumps({"points": summary}, indent=2))
    write_manifest(out_dir, "scale-study", cfg, paths, {"user_counts": user_counts, "approaches": approaches})
    return study


# =============================================================================
# CLI
# =============================================================================

def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON or a run manifest")
    common.add_argument("--out", help=f"output directory (default {OUTPUT_DIR})")
    common.add_argument("--seed", type=int, help="simulation seed override")
    common.add_argument("--jobs", type=int, help="parallel worker processes")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")

    parser = argparse.ArgumentParser(description="Multiuser redirected walking with trajectory prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the simulator and write the trace")

    p = sub.add_parser("build-dataset", parents=[common], help="cut training windows from a trace")
    p.add_argument("--trace", help="trace CSV to use instead of simulating")

    p = sub.add_parser("train", parents=[common], help="train one named approach")
    p.add_argument("--approach", required=True, choices=[a.value for a in NamedApproach])
    p.add_argument("--cell", choices=[c.value for c in CellKind], help="cell type for the Initial column")
    p.add_argument("--trace")

    p = sub.add_parser("tune", parents=[common], help="one-axis-at-a-time hyperparameter sweep")
    p.add_argument("--axes", nargs="+", choices=list(SWEEP_VALUES))
    p.add_argument("--trace")

    p = sub.add_parser("compare", parents=[common], help="train and evaluate several approaches")
    p.add_argument("--approaches", nargs="+", choices=[a.value for a in NamedApproach] + [PERFECT])
    p.add_argument("--perfect", action="store_true", help="add the exact-prediction control")
    p.add_argument("--trace")

    p = sub.add_parser("scale-study", parents=[common], help="evaluate two-user models on more users")
    p.add_argument("--users", nargs="+", type=int)
    p.add_argument("--approaches", nargs="+", choices=STUDY_APPROACHES)
    p.add_argument("--retrain", action="store_true", help="train missing two-user models first")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        setup_logging(args.log_level or os.getenv("RDW_LOG_LEVEL", "INFO"))
        cfg = load_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "build-dataset":
            cmd_build_dataset(cfg, trace=args.trace)
        elif args.command == "train":
            cmd_train(cfg, args.approach, cell=args.cell, trace=args.trace)
        elif args.command == "tune":
            cmd_tune(cfg, axes=args.axes, trace=args.trace)
        elif args.command == "compare":
            cmd_compare(cfg, approaches=args.approaches, perfect=args.perfect, trace=args.trace)
        elif args.command == "scale-study":
            cmd_scale_study(cfg, user_counts=args.users, approaches=args.approaches, retrain=args.retrain)
    except RdwSimError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"❌ {e}")
        return 1
    except OSError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"❌ I/O error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
