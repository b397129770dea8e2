"""Adam with bias correction, as a pure function over ParamSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .model import ParamSet


@dataclass
class OptimizerState:
    """First/second moments for a fixed set of tensor names, plus step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, names, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        names = list(names)
        m = {n: np.zeros_like(params.tensors[n]) for n in names}
        v = {n: np.zeros_like(params.tensors[n]) for n in names}
        return cls(m, v, 0, beta1, beta2, eps)


def adam_update(params: ParamSet, grads: dict, state: OptimizerState, lr: float):
    """One Adam step over the tensors tracked by `state`.

    Pure: returns (new ParamSet, new OptimizerState); inputs are not mutated.
    grads must cover every tracked name. Zero gradients leave parameters
    bit-identical; lr = 0 also leaves them bit-identical.
    """
    if not (lr >= 0.0) or not np.isfinite(lr):
        raise ContractViolation(f"adam_update: lr must be finite and >= 0, got {lr}")
    missing = [n for n in state.m if n not in grads]
    if missing:
        raise ContractViolation(f"adam_update: grads missing {missing}")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_tensors = dict(params.tensors)
    new_m, new_v = {}, {}
    for name in state.m:
        g = grads[name]
        if g.shape != params.tensors[name].shape:
            raise ContractViolation(f"adam_update: grad shape mismatch for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        step_vec = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_tensors[name] = params.tensors[name] - step_vec
        new_m[name] = m
        new_v[name] = v
    return ParamSet(params.arch, new_tensors), OptimizerState(new_m, new_v, t, b1, b2, eps)
