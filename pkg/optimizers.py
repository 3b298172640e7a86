"""
SGD, Adam and Nadam update rules over named parameter arrays.

step() never mutates its inputs: it returns fresh parameters and a fresh
state, so a training loop can keep or drop either.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from config import OPTIMIZER_DEFAULTS
from errors import ConfigurationError
from rnn_core import RnnParameters

OPTIMIZER_KINDS = ("sgd", "adam", "nadam")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    learning_rate: float = OPTIMIZER_DEFAULTS["adam"]["learning_rate"]
    beta1: float = OPTIMIZER_DEFAULTS["beta1"]
    beta2: float = OPTIMIZER_DEFAULTS["beta2"]
    epsilon: float = OPTIMIZER_DEFAULTS["epsilon"]

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "OptimizerSpec":
        """Spec with the kind's default learning rate"""
        if kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZER_KINDS}")
        overrides.setdefault("learning_rate", OPTIMIZER_DEFAULTS[kind]["learning_rate"])
        return cls(kind=kind, **overrides)

    def violations(self) -> List[str]:
        problems = []
        if self.kind not in OPTIMIZER_KINDS:
            problems.append(f"optimizer kind {self.kind!r} not in {OPTIMIZER_KINDS}")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                problems.append(f"{name} must lie in [0, 1) (got {value})")
        if not self.epsilon > 0:
            problems.append(f"epsilon must be > 0 (got {self.epsilon})")
        return problems


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)   # first moment
    v: Dict[str, np.ndarray] = field(default_factory=dict)   # second moment
    t: int = 0


def init_state(params: RnnParameters) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(a) for name, a in params.arrays.items()},
        v={name: np.zeros_like(a) for name, a in params.arrays.items()},
        t=0,
    )


def _check_shapes(params: RnnParameters, grads: RnnParameters, state: OptimizerState) -> None:
    expected = params.shapes()
    if grads.shapes() != expected:
        raise ConfigurationError(f"gradient shapes {grads.shapes()} do not match parameters {expected}")
    for moments in (state.m, state.v):
        if {name: a.shape for name, a in moments.items()} != expected:
            raise ConfigurationError("optimizer state does not mirror the parameter shapes")


def step(spec: OptimizerSpec, state: OptimizerState, params: RnnParameters,
         grads: RnnParameters) -> Tuple[RnnParameters, OptimizerState]:
    problems = spec.violations()
    if problems:
        raise ConfigurationError("; ".join(problems))
    _check_shapes(params, grads, state)

    t = state.t + 1
    lr, b1, b2, eps = spec.learning_rate, spec.beta1, spec.beta2, spec.epsilon
    new_arrays, new_m, new_v = {}, {}, {}
    for name, theta in params.arrays.items():
        g = grads[name]
        if spec.kind == "sgd":
            new_arrays[name] = theta - lr * g
            new_m[name], new_v[name] = state.m[name], state.v[name]
            continue

        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        if spec.kind == "adam":
            direction = m_hat
        else:
            # Nesterov look-ahead on the first moment
            direction = b1 * m_hat + (1.0 - b1) * g / (1.0 - b1 ** t)
        new_arrays[name] = theta - lr * direction / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v

    return RnnParameters(params.cell, new_arrays), OptimizerState(m=new_m, v=new_v, t=t)
