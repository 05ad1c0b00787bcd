"""Dense layers, losses, Adam, and the parameter checkpoint format, built on
the reverse-mode tape in autodiff.py. All math is float64 and deterministic."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .autodiff import Tensor, backward, concat, stack_rows


class ParameterSet(dict):
    """Named trainable tensors. Values are Tensors with requires_grad=True."""

    def add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def checksum(self) -> float:
        return float(sum(np.abs(t.data).sum() for t in self.values()))

    def copy_values(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}


def init_dense(params: ParameterSet, name: str, n_in: int, n_out: int,
               rng: np.random.Generator) -> None:
    """Kaiming-style uniform fan-in init: U(-1/sqrt(n_in), 1/sqrt(n_in))."""
    bound = 1.0 / np.sqrt(n_in)
    params.add(f"{name}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
    params.add(f"{name}.b", rng.uniform(-bound, bound, size=(n_out,)))


def dense_forward(params: ParameterSet, name: str, x: Tensor) -> Tensor:
    W, b = params[f"{name}.W"], params[f"{name}.b"]
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {W.shape[0]}")
    return x @ W + b


def relu(x: Tensor) -> Tensor:
    return x.relu()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def maxpool_over_rows(x: Tensor) -> Tensor:
    return x.max_over_rows()


def avgpool_over_rows(x: Tensor) -> Tensor:
    return x.mean_over_rows()


def clamped_l1(pred: float, target: float, delta: float = 0.1) -> float:
    """|clamp(pred) - clamp(target)| with both operands clipped to [-d, d]."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return abs(np.clip(pred, -delta, delta) - np.clip(target, -delta, delta))


def clamped_l1_loss(pred: Tensor, target: np.ndarray, delta: float = 0.1) -> Tensor:
    """Mean clamped-L1 between a prediction tensor and a constant target."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    t = np.clip(np.asarray(target, dtype=np.float64), -delta, delta)
    return (pred.clamp(-delta, delta) - Tensor(t)).abs().mean()


def mse(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (a - b).square().mean()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState,
              lr: Optional[float] = None) -> None:
    """One bias-corrected Adam update in place; missing grads are treated as 0."""
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then little-endian f32 payloads in
# header order.
# ---------------------------------------------------------------------------


def save_checkpoint(params: ParameterSet, path) -> None:
    names = sorted(params.keys())
    header = {
        "tensors": [{"name": n, "shape": list(params[n].shape), "dtype": "f4"}
                    for n in names]
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(params[n].data.astype("<f4").tobytes())


def load_checkpoint(path) -> ParameterSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        params = ParameterSet()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n_vals = int(np.prod(shape)) if shape else 1
            buf = fh.read(n_vals * 4)
            if len(buf) != n_vals * 4:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            params.add(entry["name"],
                       np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape))
    return params
