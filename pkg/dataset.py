"""
Training windows cut from simulator traces.

A window holds W steps of history for one user and the physical position H
ticks after its last step. Baseline windows carry physical (x, y) only;
Virtual windows pair each physical sample with the virtual position one tick
later, which the application already knows when the physical sample arrives.
"""

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import SIMULATION_CONFIG, TRAINING_CONFIG, WINDOW_CONFIG
from errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
FRAMES = ("relative", "absolute")
NORMALIZER_MODES = ("room", "minmax")


class FeatureVariant(str, Enum):
    BASELINE = "Baseline"
    VIRTUAL = "Virtual"

    @property
    def input_dim(self) -> int:
        return 2 if self is FeatureVariant.BASELINE else 4


@dataclass(frozen=True)
class WindowSpec:
    history_len: int = WINDOW_CONFIG["history_len"]
    horizon: int = WINDOW_CONFIG["horizon"]
    stride: int = WINDOW_CONFIG["stride"]
    frame: str = WINDOW_CONFIG["frame"]

    def violations(self) -> List[str]:
        problems = []
        if not self.history_len >= 2:
            problems.append(f"history_len must be >= 2 (got {self.history_len})")
        if not self.horizon >= 1:
            problems.append(f"horizon must be >= 1 (got {self.horizon})")
        if not self.stride >= 1:
            problems.append(f"stride must be >= 1 (got {self.stride})")
        if self.frame not in FRAMES:
            problems.append(f"frame {self.frame!r} not in {FRAMES}")
        return problems


@dataclass(frozen=True, eq=False)
class SampleWindow:
    inputs: np.ndarray           # (W, 2) or (W, 4), absolute meters
    target: np.ndarray           # physical (x, y) at t + horizon
    user: int
    t: int
    variant: FeatureVariant
    horizon: int
    physical_anchor: np.ndarray  # physical (x, y) at t
    virtual_anchor: np.ndarray   # virtual (x, y) at t

    @property
    def history_len(self) -> int:
        return len(self.inputs)


class DatasetSplit(NamedTuple):
    train: List[SampleWindow]
    test: List[SampleWindow]
    dropped: int


def _user_tracks(frames) -> Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """user -> (ticks, physical xy, virtual xy) sorted by tick"""
    grouped = defaultdict(list)
    for frame in frames:
        grouped[frame.user].append(frame)
    tracks = {}
    for user in sorted(grouped):
        rows = sorted(grouped[user], key=lambda f: f.tick)
        ticks = np.array([f.tick for f in rows])
        physical = np.array([[f.physical.position.x, f.physical.position.y] for f in rows])
        virtual = np.array([[f.virtual.position.x, f.virtual.position.y] for f in rows])
        tracks[user] = (ticks, physical, virtual)
    return tracks


def build_windows(frames, spec: WindowSpec, variant: FeatureVariant) -> List[SampleWindow]:
    problems = spec.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    w, h = spec.history_len, spec.horizon
    windows = []
    for user, (ticks, physical, virtual) in _user_tracks(frames).items():
        n = len(ticks)
        if n < w + h:
            logger.debug("user %d: %d frames is too short for W=%d, H=%d", user, n, w, h)
            continue
        # the leading virtual sample needs t + 1 < n, implied by t + h < n
        for t in range(w - 1, n - h, spec.stride):
            history = physical[t - w + 1:t + 1]
            if variant is FeatureVariant.VIRTUAL:
                history = np.hstack([history, virtual[t - w + 2:t + 2]])
            windows.append(SampleWindow(
                inputs=history.copy(),
                target=physical[t + h].copy(),
                user=user,
                t=int(ticks[t]),
                variant=variant,
                horizon=h,
                physical_anchor=physical[t].copy(),
                virtual_anchor=virtual[t].copy(),
            ))
    return windows


def window_features(window: SampleWindow, frame: str) -> Tuple[np.ndarray, np.ndarray]:
    """Inputs and target in the requested coordinate frame, meters"""
    if frame == "absolute":
        return window.inputs, window.target
    if frame != "relative":
        raise ConfigurationError(f"frame {frame!r} not in {FRAMES}")
    inputs = window.inputs.copy()
    inputs[:, 0:2] -= window.physical_anchor
    if window.variant is FeatureVariant.VIRTUAL:
        inputs[:, 2:4] -= window.virtual_anchor
    return inputs, window.target - window.physical_anchor


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-axis affine map u = (xy - offset) / scale, shared by physical and virtual coordinates"""
    mode: str
    frame: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: np.ndarray = field(default_factory=lambda: np.ones(2))

    def normalize(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, dtype=np.float64) - self.offset) / self.scale

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) * self.scale + self.offset

    def to_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "frame": self.frame,
                "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Normalizer":
        return cls(mode=data["mode"], frame=data["frame"],
                   offset=np.asarray(data["offset"], dtype=np.float64),
                   scale=np.asarray(data["scale"], dtype=np.float64))


def fit_normalizer(train_windows: Sequence[SampleWindow], mode: str = TRAINING_CONFIG["normalizer_mode"],
                   frame: str = WINDOW_CONFIG["frame"],
                   room_side: float = SIMULATION_CONFIG["room_side"]) -> Normalizer:
    """Room-side scaling (default) or min-max over the training windows"""
    if not train_windows:
        raise DomainError("cannot fit a normalizer on an empty training set")
    if mode not in NORMALIZER_MODES:
        raise ConfigurationError(f"normalizer mode {mode!r} not in {NORMALIZER_MODES}")
    if frame not in FRAMES:
        raise ConfigurationError(f"frame {frame!r} not in {FRAMES}")

    if mode == "room":
        if frame == "absolute":
            return Normalizer(mode, frame, np.zeros(2), np.full(2, float(room_side)))
        # relative offsets span [-side, side]
        return Normalizer(mode, frame, np.full(2, -float(room_side)), np.full(2, 2.0 * room_side))

    points = []
    for window in train_windows:
        inputs, target = window_features(window, frame)
        points.append(inputs.reshape(-1, 2))
        points.append(target[None, :])
    points = np.vstack(points)
    low, high = points.min(axis=0), points.max(axis=0)
    span = high - low
    offset, scale = low.copy(), span.copy()
    for axis in np.flatnonzero(span <= 0.0):
        logger.warning("normalizer axis %d has zero range; using identity on it", axis)
        offset[axis], scale[axis] = 0.0, 1.0
    return Normalizer(mode, frame, offset, scale)


def encode(windows: Sequence[SampleWindow], normalizer: Normalizer) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized (inputs, targets) arrays of shape (N, W, D) and (N, 2)"""
    if not windows:
        raise DomainError("no windows to encode")
    xs, ys = [], []
    for window in windows:
        inputs, target = window_features(window, normalizer.frame)
        xs.append(normalizer.normalize(inputs.reshape(-1, 2)).reshape(inputs.shape))
        ys.append(normalizer.normalize(target))
    return np.stack(xs), np.stack(ys)


def decode_predictions(predictions: np.ndarray, windows: Sequence[SampleWindow],
                       normalizer: Normalizer) -> np.ndarray:
    """Normalized predictions back to absolute room coordinates, meters"""
    raw = normalizer.denormalize(predictions)
    if normalizer.frame == "relative":
        raw = raw + np.stack([w.physical_anchor for w in windows])
    return raw


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(windows: Sequence[SampleWindow], train_fraction: float = TRAINING_CONFIG["train_fraction"],
          seed: Optional[int] = None) -> DatasetSplit:
    """Chronological per-user split; test windows whose history reaches the last
    training target are dropped. The split draws no randomness, seed is accepted
    for call-site symmetry with the rest of the pipeline."""
    if not windows:
        raise DomainError("cannot split an empty window list")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")

    per_user = defaultdict(list)
    for window in windows:
        per_user[window.user].append(window)

    train, test, dropped = [], [], 0
    for user in sorted(per_user):
        user_windows = sorted(per_user[user], key=lambda w: w.t)
        n_train = int(np.floor(train_fraction * len(user_windows)))
        head, tail = user_windows[:n_train], user_windows[n_train:]
        train.extend(head)
        if not head:
            test.extend(tail)
            continue
        last_target_tick = head[-1].t + head[-1].horizon
        for window in tail:
            if window.t - window.history_len + 1 <= last_target_tick:
                dropped += 1
            else:
                test.append(window)

    if not train or not test:
        raise ConfigurationError(
            f"train_fraction {train_fraction} leaves {len(train)} train / {len(test)} test windows")
    if dropped:
        logger.info("dropped %d test windows overlapping the training span", dropped)
    return DatasetSplit(train, test, dropped)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def save_dataset(path, windows: Sequence[SampleWindow], spec: WindowSpec, variant: FeatureVariant,
                 normalizer: Optional[Normalizer] = None) -> None:
    document = {
        "format_version": DATASET_VERSION,
        "window_spec": asdict(spec),
        "variant": variant.value,
        "normalizer": normalizer.to_dict() if normalizer else None,
        "samples": {
            "user": [w.user for w in windows],
            "t": [w.t for w in windows],
            "inputs": np.concatenate([w.inputs.ravel() for w in windows]).tolist() if windows else [],
            "targets": np.concatenate([w.target for w in windows]).tolist() if windows else [],
            "physical_anchor": np.concatenate([w.physical_anchor for w in windows]).tolist() if windows else [],
            "virtual_anchor": np.concatenate([w.virtual_anchor for w in windows]).tolist() if windows else [],
        },
    }
    Path(path).write_text(json.dumps(document))


def load_dataset(path) -> Tuple[List[SampleWindow], WindowSpec, FeatureVariant, Optional[Normalizer]]:
    document = json.loads(Path(path).read_text())
    if document.get("format_version") != DATASET_VERSION:
        raise ConfigurationError(f"{path}: unsupported dataset version {document.get('format_version')!r}")
    spec = WindowSpec(**document["window_spec"])
    variant = FeatureVariant(document["variant"])
    normalizer = Normalizer.from_dict(document["normalizer"]) if document["normalizer"] else None
    samples = document["samples"]
    n = len(samples["user"])
    inputs = np.asarray(samples["inputs"], dtype=np.float64).reshape(n, spec.history_len, variant.input_dim)
    targets = np.asarray(samples["targets"], dtype=np.float64).reshape(n, 2)
    p_anchor = np.asarray(samples["physical_anchor"], dtype=np.float64).reshape(n, 2)
    v_anchor = np.asarray(samples["virtual_anchor"], dtype=np.float64).reshape(n, 2)
    windows = [
        SampleWindow(inputs=inputs[k], target=targets[k], user=int(samples["user"][k]), t=int(samples["t"][k]),
                     variant=variant, horizon=spec.horizon, physical_anchor=p_anchor[k], virtual_anchor=v_anchor[k])
        for k in range(n)
    ]
    return windows, spec, variant, normalizer


def save_targets_csv(path, windows: Sequence[SampleWindow]) -> None:
    table = pd.DataFrame({
        "user": [w.user for w in windows],
        "t": [w.t for w in windows],
        "target_x": [float(w.target[0]) for w in windows],
        "target_y": [float(w.target[1]) for w in windows],
    }, columns=["user", "t", "target_x", "target_y"])
    table.to_csv(path, index=False, float_format="%.9g")
