"""
Single-layer LSTM/GRU regressor with a dense output head.

Forward passes keep every intermediate so that backward() can run exact
backpropagation through time over the whole window. All math is float64
numpy; batches are processed as (batch, steps, features) arrays.
"""

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# normalized encoding of the room centre and of a zero relative offset
HEAD_CENTRE = 0.5


class CellKind(str, Enum):
    LSTM = "LSTM"
    GRU = "GRU"


ACTIVATIONS = ("relu", "softsign", "softmax", "softplus", "tanh", "sigmoid", "linear")

GATES = {
    CellKind.LSTM: ("f", "i", "g", "o"),   # forget, input, candidate, output
    CellKind.GRU: ("z", "r", "h"),          # update, reset, candidate
}


@dataclass(frozen=True)
class RnnSpec:
    cell: CellKind
    input_dim: int
    hidden_units: int
    output_dim: int = 2
    activation: str = "linear"

    def violations(self) -> List[str]:
        problems = []
        if not isinstance(self.cell, CellKind):
            problems.append(f"unknown cell {self.cell!r}")
        for name in ("input_dim", "hidden_units", "output_dim"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and value > 0):
                problems.append(f"{name} must be a positive integer (got {value!r})")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation {self.activation!r} not in {ACTIVATIONS}")
        return problems

    @property
    def head_units(self) -> int:
        # softmax head carries one slack unit so every point of the unit square stays reachable
        return self.output_dim + 1 if self.activation == "softmax" else self.output_dim

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["cell"] = self.cell.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RnnSpec":
        return cls(cell=CellKind(data["cell"]), input_dim=int(data["input_dim"]),
                   hidden_units=int(data["hidden_units"]), output_dim=int(data["output_dim"]),
                   activation=data["activation"])


@dataclass
class RnnParameters:
    """Named weight arrays; gradients use the same container"""
    cell: CellKind
    arrays: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> List[str]:
        return list(self.arrays)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: a.shape for name, a in self.arrays.items()}

    def zeros_like(self) -> "RnnParameters":
        return RnnParameters(self.cell, {name: np.zeros_like(a) for name, a in self.arrays.items()})

    def copy(self) -> "RnnParameters":
        return RnnParameters(self.cell, {name: a.copy() for name, a in self.arrays.items()})


def parameter_shapes(spec: RnnSpec) -> Dict[str, Tuple[int, ...]]:
    h, d = spec.hidden_units, spec.input_dim
    shapes = {}
    for gate in GATES[spec.cell]:
        shapes[f"W_{gate}"] = (h, d)
        shapes[f"U_{gate}"] = (h, h)
        shapes[f"b_{gate}"] = (h,)
    shapes["W_out"] = (spec.head_units, h)
    shapes["b_out"] = (spec.head_units,)
    return shapes


def check_parameters(spec: RnnSpec, params: RnnParameters) -> None:
    problems = spec.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    expected = parameter_shapes(spec)
    actual = params.shapes()
    if params.cell != spec.cell or expected != actual:
        raise ConfigurationError(f"parameters {params.cell.value} {actual} do not match spec {expected}")


def head_bias(activation: str, centre: float, output_dim: int) -> np.ndarray:
    """Bias that makes the head emit `centre` on every output when W_out is zero"""
    c = float(centre)
    if activation in ("linear", "relu"):
        if activation == "relu" and c <= 0.0:
            raise ConfigurationError(f"a relu head cannot start at {c}")
        return np.full(output_dim, c)
    if activation == "softsign":
        return np.full(output_dim, c / (1.0 - abs(c)))
    if activation == "softplus":
        return np.full(output_dim, np.log(np.expm1(c)))
    if activation == "tanh":
        return np.full(output_dim, np.arctanh(c))
    if activation == "sigmoid":
        return np.full(output_dim, np.log(c / (1.0 - c)))
    if activation == "softmax":
        # decoded as output_dim * y[:output_dim]; the slack unit takes the rest
        return np.log(np.append(np.full(output_dim, c / output_dim), 1.0 - c))
    raise ConfigurationError(f"unknown activation {activation!r}")


def init_parameters(spec: RnnSpec, seed: int, head_centre: float = HEAD_CENTRE) -> RnnParameters:
    """Recurrent weights uniform in [-1/sqrt(hidden), 1/sqrt(hidden)]; the head
    starts flat at head_centre so no output unit begins saturated or dead"""
    problems = spec.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(spec.hidden_units)
    arrays = {name: rng.uniform(-bound, bound, shape) for name, shape in parameter_shapes(spec).items()}
    arrays["W_out"] = np.zeros_like(arrays["W_out"])
    arrays["b_out"] = head_bias(spec.activation, head_centre, spec.output_dim)
    return RnnParameters(spec.cell, arrays)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation_apply(kind: str, v: np.ndarray) -> np.ndarray:
    """Head activation; softmax normalizes along the last axis"""
    v = np.asarray(v, dtype=np.float64)
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "softsign":
        return v / (1.0 + np.abs(v))
    if kind == "softplus":
        return np.logaddexp(0.0, v)
    if kind == "softmax":
        if v.shape[-1] < 1:
            raise DomainError("softmax needs at least one element")
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "sigmoid":
        return _sigmoid(v)
    if kind == "linear":
        return v.copy()
    raise ConfigurationError(f"unknown activation {kind!r}")


def activation_backward(kind: str, z: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation z given y = act(z) and dL/dy"""
    if kind == "relu":
        return dy * (z > 0.0)
    if kind == "softsign":
        return dy / (1.0 + np.abs(z)) ** 2
    if kind == "softplus":
        return dy * _sigmoid(z)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    if kind == "tanh":
        return dy * (1.0 - y ** 2)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "linear":
        return dy
    raise ConfigurationError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------

class LstmCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


class GruCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray


def _check_step_dims(params: RnnParameters, gate: str, x: np.ndarray, h_prev: np.ndarray) -> None:
    hidden, input_dim = params[f"W_{gate}"].shape
    if x.shape[-1] != input_dim or h_prev.shape[-1] != hidden:
        raise ConfigurationError(
            f"step expects input {input_dim} / hidden {hidden}, got {x.shape[-1]} / {h_prev.shape[-1]}")


def _pre(params: RnnParameters, gate: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return x @ params[f"W_{gate}"].T + h @ params[f"U_{gate}"].T + params[f"b_{gate}"]


def lstm_step(params: RnnParameters, x: np.ndarray, h_prev: np.ndarray,
              c_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    _check_step_dims(params, "f", x, h_prev)
    if c_prev.shape != h_prev.shape:
        raise ConfigurationError(f"cell state {c_prev.shape} does not match hidden state {h_prev.shape}")
    f = _sigmoid(_pre(params, "f", x, h_prev))
    i = _sigmoid(_pre(params, "i", x, h_prev))
    g = np.tanh(_pre(params, "g", x, h_prev))
    o = _sigmoid(_pre(params, "o", x, h_prev))
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(x, h_prev, c_prev, f, i, g, o, tanh_c)


def gru_step(params: RnnParameters, x: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, GruCache]:
    _check_step_dims(params, "z", x, h_prev)
    z = _sigmoid(_pre(params, "z", x, h_prev))
    r = _sigmoid(_pre(params, "r", x, h_prev))
    h_tilde = np.tanh(x @ params["W_h"].T + (r * h_prev) @ params["U_h"].T + params["b_h"])
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, GruCache(x, h_prev, z, r, h_tilde)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    spec: RnnSpec
    params: RnnParameters
    steps: list
    h_last: np.ndarray
    head_pre: np.ndarray
    head_out: np.ndarray


def _decode_head(spec: RnnSpec, y: np.ndarray) -> np.ndarray:
    if spec.activation == "softmax":
        return spec.output_dim * y[..., :spec.output_dim]
    return y


def forward_batch(spec: RnnSpec, params: RnnParameters, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """inputs (batch, steps, input_dim) -> predictions (batch, output_dim)

    Every head but softmax emits activation(W_out h_T + b_out) directly. The
    softmax head has output_dim + 1 units and the prediction is
    output_dim * y[:output_dim], so it spans the whole normalized unit square
    instead of the segment x + y = 1.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[1] == 0:
        raise DomainError(f"expected a non-empty (batch, steps, features) array, got shape {inputs.shape}")
    if inputs.shape[2] != spec.input_dim:
        raise ConfigurationError(f"inputs carry {inputs.shape[2]} features, spec expects {spec.input_dim}")
    batch = inputs.shape[0]
    h = np.zeros((batch, spec.hidden_units))
    c = np.zeros((batch, spec.hidden_units))
    steps = []
    for t in range(inputs.shape[1]):
        if spec.cell is CellKind.LSTM:
            h, c, step = lstm_step(params, inputs[:, t, :], h, c)
        else:
            h, step = gru_step(params, inputs[:, t, :], h)
        steps.append(step)
    head_pre = h @ params["W_out"].T + params["b_out"]
    head_out = activation_apply(spec.activation, head_pre)
    prediction = _decode_head(spec, head_out)
    return prediction, ForwardCache(spec, params, steps, h, head_pre, head_out)


def forward(spec: RnnSpec, params: RnnParameters, sequence: Sequence[Sequence[float]]) -> Tuple[np.ndarray, ForwardCache]:
    """Single sequence of input vectors; h0 = c0 = 0"""
    if len(sequence) == 0:
        raise DomainError("cannot run a recurrent network over an empty sequence")
    prediction, cache = forward_batch(spec, params, np.asarray(sequence, dtype=np.float64)[None, :, :])
    return prediction[0], cache


def _lstm_backward(params: RnnParameters, steps: List[LstmCache], dh: np.ndarray, grads: Dict[str, np.ndarray]) -> None:
    dc = np.zeros_like(dh)
    for s in reversed(steps):
        do = dh * s.tanh_c
        dc = dc + dh * s.o * (1.0 - s.tanh_c ** 2)
        pre_grads = {
            "f": dc * s.c_prev * s.f * (1.0 - s.f),
            "i": dc * s.g * s.i * (1.0 - s.i),
            "g": dc * s.i * (1.0 - s.g ** 2),
            "o": do * s.o * (1.0 - s.o),
        }
        dc = dc * s.f
        dh = np.zeros_like(dh)
        for gate, da in pre_grads.items():
            grads[f"W_{gate}"] += da.T @ s.x
            grads[f"U_{gate}"] += da.T @ s.h_prev
            grads[f"b_{gate}"] += da.sum(axis=0)
            dh += da @ params[f"U_{gate}"]


def _gru_backward(params: RnnParameters, steps: List[GruCache], dh: np.ndarray, grads: Dict[str, np.ndarray]) -> None:
    for s in reversed(steps):
        da_h = dh * s.z * (1.0 - s.h_tilde ** 2)
        da_z = dh * (s.h_tilde - s.h_prev) * s.z * (1.0 - s.z)
        d_rh = da_h @ params["U_h"]
        da_r = d_rh * s.h_prev * s.r * (1.0 - s.r)

        grads["W_h"] += da_h.T @ s.x
        grads["U_h"] += da_h.T @ (s.r * s.h_prev)
        grads["b_h"] += da_h.sum(axis=0)
        for gate, da in (("z", da_z), ("r", da_r)):
            grads[f"W_{gate}"] += da.T @ s.x
            grads[f"U_{gate}"] += da.T @ s.h_prev
            grads[f"b_{gate}"] += da.sum(axis=0)

        dh = dh * (1.0 - s.z) + d_rh * s.r + da_z @ params["U_z"] + da_r @ params["U_r"]


def backward_batch(spec: RnnSpec, params: RnnParameters, cache: ForwardCache,
                   loss_gradient: np.ndarray) -> RnnParameters:
    """Exact BPTT; gradients are summed over the batch"""
    if cache.params is not params or cache.spec != spec:
        raise DomainError("forward cache was produced by different parameters or spec")
    dpred = np.asarray(loss_gradient, dtype=np.float64)
    if dpred.shape != (cache.h_last.shape[0], spec.output_dim):
        raise DomainError(f"loss gradient shape {dpred.shape} does not match predictions "
                          f"({cache.h_last.shape[0]}, {spec.output_dim})")
    if spec.activation == "softmax":
        dy = np.zeros_like(cache.head_out)
        dy[:, :spec.output_dim] = spec.output_dim * dpred
    else:
        dy = dpred
    dz = activation_backward(spec.activation, cache.head_pre, cache.head_out, dy)

    grads = params.zeros_like()
    g = grads.arrays
    g["W_out"] += dz.T @ cache.h_last
    g["b_out"] += dz.sum(axis=0)
    dh = dz @ params["W_out"]
    if spec.cell is CellKind.LSTM:
        _lstm_backward(params, cache.steps, dh, g)
    else:
        _gru_backward(params, cache.steps, dh, g)
    return grads


def backward(spec: RnnSpec, params: RnnParameters, cache: ForwardCache, loss_gradient: np.ndarray) -> RnnParameters:
    return backward_batch(spec, params, cache, np.asarray(loss_gradient, dtype=np.float64)[None, :])


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Squared error summed over coordinates (m^2) and its gradient w.r.t. pred"""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DomainError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    diff = pred - target
    return float(np.sum(diff ** 2)), 2.0 * diff


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, spec: RnnSpec, params: RnnParameters, extra: Optional[Dict[str, Any]] = None) -> None:
    check_parameters(spec, params)
    document = {
        "format_version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "parameters": {
            name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in params.arrays.items()
        },
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(document, indent=1))


def load_checkpoint(path) -> Tuple[RnnSpec, RnnParameters, Dict[str, Any]]:
    document = json.loads(Path(path).read_text())
    version = document.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version!r}")
    spec = RnnSpec.from_dict(document["spec"])
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in document["parameters"].items()
    }
    params = RnnParameters(spec.cell, arrays)
    check_parameters(spec, params)
    return spec, params, document.get("extra", {})
