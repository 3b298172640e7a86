"""
Mini-batch training, evaluation and the one-axis-at-a-time hyperparameter sweep.
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import HYPERPARAMETERS, SWEEP_ORDER, SWEEP_VALUES, TRAINING_CONFIG
from dataset import FeatureVariant, Normalizer, SampleWindow, decode_predictions, encode
from errors import ConfigurationError, RdwSimError
from optimizers import OptimizerSpec, init_state, step
from rnn_core import CellKind, RnnParameters, RnnSpec, backward_batch, forward_batch, init_parameters, mse_loss

logger = logging.getLogger(__name__)

SWEEP_AXES = ("activation", "optimizer", "neurons", "batch", "epochs")
PREDICT_CHUNK = 2048


class NamedApproach(str, Enum):
    INITIAL = "Initial"
    INITIAL_LSTM = "Initial-LSTM"
    INITIAL_GRU = "Initial-GRU"
    LSTM_B = "LSTM-B"
    LSTM_I1 = "LSTM-I1"
    LSTM_I2 = "LSTM-I2"
    LSTM_V = "LSTM-V"
    GRU_B = "GRU-B"
    GRU_I1 = "GRU-I1"
    GRU_I2 = "GRU-I2"
    GRU_V = "GRU-V"

    @property
    def is_initial(self) -> bool:
        return self.value.startswith("Initial")

    @property
    def cell(self) -> Optional[CellKind]:
        """None for the bare Initial column, which takes its cell from the caller"""
        if self is NamedApproach.INITIAL:
            return None
        if self.is_initial:
            return CellKind(self.value.split("-")[1])
        return CellKind(self.value.split("-")[0])

    @property
    def variant(self) -> Optional[FeatureVariant]:
        if self.is_initial:
            return None
        return FeatureVariant.BASELINE if self.value.endswith("-B") else FeatureVariant.VIRTUAL


@dataclass(frozen=True)
class TrainSpec:
    rnn: RnnSpec
    optimizer: OptimizerSpec
    batch_size: int
    epochs: int
    seed: int = TRAINING_CONFIG["seed"]
    variant: FeatureVariant = FeatureVariant.BASELINE
    label: str = ""

    def violations(self) -> List[str]:
        problems = self.rnn.violations() + self.optimizer.violations()
        if not self.batch_size >= 1:
            problems.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if not self.epochs >= 1:
            problems.append(f"epochs must be >= 1 (got {self.epochs})")
        if self.rnn.input_dim != self.variant.input_dim:
            problems.append(f"{self.variant.value} windows carry {self.variant.input_dim} features "
                            f"but the network expects {self.rnn.input_dim}")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "cell": self.rnn.cell.value,
            "variant": self.variant.value,
            "activation": self.rnn.activation,
            "optimizer": self.optimizer.kind,
            "learning_rate": self.optimizer.learning_rate,
            "neurons": self.rnn.hidden_units,
            "batch": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }


def make_spec(hyper: Dict[str, Any], cell: CellKind, variant: FeatureVariant,
              seed: int = TRAINING_CONFIG["seed"], label: str = "") -> TrainSpec:
    rnn = RnnSpec(cell=cell, input_dim=variant.input_dim, hidden_units=int(hyper["neurons"]),
                  activation=hyper["activation"])
    return TrainSpec(rnn=rnn, optimizer=OptimizerSpec.for_kind(hyper["optimizer"]),
                     batch_size=int(hyper["batch"]), epochs=int(hyper["epochs"]),
                     seed=seed, variant=variant, label=label)


def approach_spec(approach: NamedApproach, cell: Optional[CellKind] = None,
                  variant: Optional[FeatureVariant] = None, seed: int = TRAINING_CONFIG["seed"]) -> TrainSpec:
    """TrainSpec for a named column; I1 reuses the baseline column with virtual
    features and I2 additionally doubles neurons and epochs. The Initial columns
    take their variant from the caller (Baseline when omitted)."""
    approach = NamedApproach(approach)
    if approach.is_initial:
        if approach.cell is not None and cell is not None and CellKind(cell) is not approach.cell:
            raise ConfigurationError(f"{approach.value} cannot be trained as a {CellKind(cell).value}")
        cell = approach.cell or cell
        if cell is None:
            raise ConfigurationError("the Initial configuration needs an explicit cell type")
        return make_spec(HYPERPARAMETERS["Initial"], CellKind(cell), variant or FeatureVariant.BASELINE,
                         seed, label=f"Initial-{CellKind(cell).value}")

    prefix = approach.cell.value
    if approach.value.endswith(("-B", "-I1", "-I2")):
        hyper = dict(HYPERPARAMETERS[f"{prefix}-B"])
    else:
        hyper = dict(HYPERPARAMETERS[f"{prefix}-V"])
    if approach.value.endswith("-I2"):
        hyper["neurons"] *= 2
        hyper["epochs"] *= 2
    return make_spec(hyper, approach.cell, approach.variant, seed, label=approach.value)


def with_value(spec: TrainSpec, axis: str, value) -> TrainSpec:
    if axis == "activation":
        return replace(spec, rnn=replace(spec.rnn, activation=value))
    if axis == "optimizer":
        return replace(spec, optimizer=OptimizerSpec.for_kind(value))
    if axis == "neurons":
        return replace(spec, rnn=replace(spec.rnn, hidden_units=int(value)))
    if axis == "batch":
        return replace(spec, batch_size=int(value))
    if axis == "epochs":
        return replace(spec, epochs=int(value))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


class TrainingData(NamedTuple):
    train: List[SampleWindow]
    test: List[SampleWindow]
    normalizer: Normalizer


class SeSummary(NamedTuple):
    count: int
    mean: float
    median: float
    q1: float
    q3: float
    min: float
    max: float
    whisker_low: float
    whisker_high: float


@dataclass
class TrainReport:
    label: str
    spec: Dict[str, Any]
    epoch_losses: List[float]
    optimizer_steps: int
    training_seconds: float
    train_size: int
    test_users: List[int] = field(default_factory=list)
    test_ticks: List[int] = field(default_factory=list)
    test_se: List[float] = field(default_factory=list)

    @property
    def summary(self) -> SeSummary:
        return summarize(self.test_se)

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data = {
            "label": self.label,
            "spec": self.spec,
            "epoch_losses": self.epoch_losses,
            "optimizer_steps": self.optimizer_steps,
            "train_size": self.train_size,
            "test_size": len(self.test_se),
            "summary": self.summary._asdict(),
            "per_user_mean_se": per_user_mean(self.test_users, self.test_se),
        }
        if include_timing:
            data["training_seconds"] = self.training_seconds
        return data


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict(spec: TrainSpec, params: RnnParameters, windows: Sequence[SampleWindow],
            normalizer: Normalizer) -> np.ndarray:
    """Raw predicted positions (N, 2), meters"""
    if not windows:
        return np.zeros((0, 2))
    x, _ = encode(windows, normalizer)
    chunks = [forward_batch(spec.rnn, params, x[k:k + PREDICT_CHUNK])[0]
              for k in range(0, len(x), PREDICT_CHUNK)]
    return decode_predictions(np.vstack(chunks), windows, normalizer)


def squared_errors(predictions: np.ndarray, windows: Sequence[SampleWindow]) -> np.ndarray:
    if not windows:
        return np.zeros(0)
    targets = np.stack([w.target for w in windows])
    return np.sum((np.asarray(predictions) - targets) ** 2, axis=1)


def summarize(se: Sequence[float]) -> SeSummary:
    """Box-plot statistics; whiskers reach the furthest sample within 1.5 IQR"""
    se = np.asarray(se, dtype=np.float64)
    if se.size == 0:
        return SeSummary(0, *([math.nan] * 8))
    q1, median, q3 = np.percentile(se, [25, 50, 75])
    iqr = q3 - q1
    inside = se[(se >= q1 - 1.5 * iqr) & (se <= q3 + 1.5 * iqr)]
    return SeSummary(
        count=int(se.size), mean=float(se.mean()), median=float(median), q1=float(q1), q3=float(q3),
        min=float(se.min()), max=float(se.max()),
        whisker_low=float(inside.min()), whisker_high=float(inside.max()),
    )


def per_user_mean(users: Sequence[int], se: Sequence[float]) -> Dict[str, float]:
    table = pd.DataFrame({"user": list(users), "se": list(se)})
    return {str(user): float(value) for user, value in table.groupby("user")["se"].mean().items()}


def evaluate(params: RnnParameters, spec: TrainSpec, windows: Sequence[SampleWindow],
             normalizer: Normalizer) -> Tuple[np.ndarray, SeSummary]:
    se = squared_errors(predict(spec, params, windows, normalizer), windows)
    return se, summarize(se)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(spec: TrainSpec, train_windows: Sequence[SampleWindow], test_windows: Sequence[SampleWindow],
          normalizer: Normalizer) -> Tuple[RnnParameters, TrainReport]:
    """epochs x ceil(N / batch_size) optimizer steps on the batch-mean SE (m^2)"""
    problems = spec.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    if not train_windows:
        raise ConfigurationError("training set is empty")
    mismatched = {w.variant for w in list(train_windows) + list(test_windows)} - {spec.variant}
    if mismatched:
        raise ConfigurationError(f"{spec.variant.value} spec given {sorted(v.value for v in mismatched)} windows")
    n = len(train_windows)
    if spec.batch_size > n:
        raise ConfigurationError(f"batch_size {spec.batch_size} exceeds the {n} training windows")

    x, y = encode(train_windows, normalizer)
    scale = normalizer.scale
    params = init_parameters(spec.rnn, spec.seed)
    state = init_state(params)
    rng = np.random.default_rng([spec.seed, 1])
    epoch_losses, steps = [], 0

    logger.info("training %s: %d windows, batch %d, %d epochs", spec.label or spec.rnn.cell.value,
                n, spec.batch_size, spec.epochs)
    started = time.perf_counter()
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            pred, cache = forward_batch(spec.rnn, params, x[idx])
            # loss in raw meters: the affine offset cancels, the scale does not
            total, grad_raw = mse_loss(pred * scale, y[idx] * scale)
            grads = backward_batch(spec.rnn, params, cache, grad_raw * scale / len(idx))
            params, state = step(spec.optimizer, state, params, grads)
            epoch_total += total
            steps += 1
        epoch_losses.append(epoch_total / n)
        logger.debug("epoch %d/%d mean loss %.3e m^2", epoch + 1, spec.epochs, epoch_losses[-1])
    elapsed = time.perf_counter() - started

    se, summary = evaluate(params, spec, test_windows, normalizer)
    logger.info("%s: final train loss %.3e m^2, test mean SE %.3e m^2, %.1f s",
                spec.label or spec.rnn.cell.value, epoch_losses[-1], summary.mean, elapsed)
    report = TrainReport(
        label=spec.label,
        spec=spec.to_dict(),
        epoch_losses=[float(v) for v in epoch_losses],
        optimizer_steps=steps,
        training_seconds=elapsed,
        train_size=n,
        test_users=[w.user for w in test_windows],
        test_ticks=[w.t for w in test_windows],
        test_se=[float(v) for v in se],
    )
    return params, report


def train_on(spec: TrainSpec, data: TrainingData) -> Tuple[RnnParameters, TrainReport]:
    return train(spec, data.train, data.test, data.normalizer)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

Runner = Callable[[TrainSpec, TrainingData], Tuple[Any, TrainReport]]


@dataclass
class SweepEntry:
    value: Any
    spec: TrainSpec
    report: Optional[TrainReport] = None
    error: Optional[str] = None

    @property
    def mean_se(self) -> float:
        return self.report.summary.mean if self.report else math.nan


@dataclass
class SweepResult:
    axis: str
    entries: List[SweepEntry]
    ranking: List[Any]
    best_value: Any
    best_spec: TrainSpec
    influential: bool

    @property
    def failures(self) -> List[SweepEntry]:
        return [e for e in self.entries if e.error is not None]


@dataclass
class TuneResult:
    best_spec: TrainSpec
    sweeps: List[SweepResult]


def entry_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _run_entry(runner: Runner, spec: TrainSpec, data: TrainingData) -> Tuple[Optional[TrainReport], Optional[str]]:
    try:
        _, report = runner(spec, data)
        return report, None
    except Exception as e:  # recorded on the entry, the sweep goes on
        return None, f"{type(e).__name__}: {e}"


def is_influential(mean_errors: Sequence[float], threshold: float = TRAINING_CONFIG["influence_threshold"]) -> bool:
    """Best and worst mean SE differ by more than the threshold, relative to the best"""
    if len(mean_errors) < 2:
        return False
    best, worst = min(mean_errors), max(mean_errors)
    if best == 0.0:
        return worst > 0.0
    return (worst - best) / best > threshold


def sweep(base: TrainSpec, axis: str, values: Sequence, data: TrainingData, runner: Runner = train_on,
          jobs: int = 1, threshold: float = TRAINING_CONFIG["influence_threshold"]) -> SweepResult:
    if not values:
        raise ConfigurationError(f"sweep over {axis!r} needs at least one value")
    entries = [SweepEntry(value, replace(with_value(base, axis, value), seed=entry_seed(base.seed, k)))
               for k, value in enumerate(values)]

    if jobs > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_entry, runner, e.spec, data) for e in entries]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_entry(runner, e.spec, data) for e in entries]

    for entry, (report, error) in zip(entries, outcomes):
        entry.report, entry.error = report, error
        if error:
            logger.warning("sweep %s=%r failed: %s", axis, entry.value, error)

    succeeded = sorted((e for e in entries if e.error is None), key=lambda e: e.mean_se)
    if not succeeded:
        raise RdwSimError(f"every {axis} sweep entry failed: " + "; ".join(e.error for e in entries))
    best = succeeded[0]
    influential = is_influential([e.mean_se for e in succeeded], threshold)
    logger.info("sweep %s: best %r (mean SE %.3e m^2)%s", axis, best.value, best.mean_se,
                ", influential" if influential else "")
    return SweepResult(axis=axis, entries=entries, ranking=[e.value for e in succeeded],
                       best_value=best.value, best_spec=with_value(base, axis, best.value),
                       influential=influential)


def tune(base: TrainSpec, data: TrainingData, axes: Sequence[str] = SWEEP_ORDER,
         values_per_axis: Optional[Dict[str, Sequence]] = None, runner: Runner = train_on,
         jobs: int = 1) -> TuneResult:
    """Sweep one axis at a time, carrying each winner into the next sweep"""
    values_per_axis = values_per_axis or SWEEP_VALUES
    current, sweeps = base, []
    for axis in axes:
        if axis not in values_per_axis:
            raise ConfigurationError(f"no sweep values configured for axis {axis!r}")
        result = sweep(current, axis, values_per_axis[axis], data, runner=runner, jobs=jobs)
        sweeps.append(result)
        current = result.best_spec
    return TuneResult(current, sweeps)


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def save_report(path, report: TrainReport, include_timing: bool = True) -> None:
    Path(path).write_text(json.dumps(report.to_dict(include_timing), indent=2))


def save_loss_csv(path, report: TrainReport) -> None:
    table = pd.DataFrame({"epoch": np.arange(1, len(report.epoch_losses) + 1),
                          "mean_loss": report.epoch_losses})
    table.to_csv(path, index=False, float_format="%.9g")


def save_se_csv(path, report: TrainReport) -> None:
    table = pd.DataFrame({"user": report.test_users, "tick": report.test_ticks, "se": report.test_se},
                         columns=["user", "tick", "se"])
    table.to_csv(path, index=False, float_format="%.9g")


def sweep_table(result: SweepResult) -> pd.DataFrame:
    """One row per swept value with its SE summary"""
    rows = []
    for entry in result.entries:
        summary = entry.report.summary._asdict() if entry.report else {}
        rows.append({"axis": result.axis, "value": entry.value, "error": entry.error or "", **summary})
    return pd.DataFrame(rows)


def sweep_samples(result: SweepResult) -> pd.DataFrame:
    """Per-window SE of every successful entry in long form"""
    frames = [pd.DataFrame({"axis": result.axis, "value": str(e.value), "se": e.report.test_se})
              for e in result.entries if e.report is not None]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["axis", "value", "se"])
