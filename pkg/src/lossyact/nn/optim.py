from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ShapeError
from ..tensor import load_tensor, save_tensor


@dataclass
class TrainState:
    weights: list[np.ndarray]
    momentum: list[np.ndarray] = field(default_factory=list)
    lr: float = 0.01
    mu: float = 0.9
    batch_size: int = 32
    iteration: int = 0

    def __post_init__(self):
        if not self.momentum:
            self.momentum = [np.zeros_like(w) for w in self.weights]
        if [m.shape for m in self.momentum] != [w.shape for w in self.weights]:
            raise ShapeError("momentum shapes must mirror weight shapes")

    def save(self, directory) -> None:
        """Checkpoint as TNSR files plus a small JSON with the hyperparameters."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, (w, m) in enumerate(zip(self.weights, self.momentum)):
            save_tensor(d / f"weight_{i}.tnsr", w)
            save_tensor(d / f"momentum_{i}.tnsr", m)
        meta = {"lr": self.lr, "mu": self.mu, "batch_size": self.batch_size,
                "iteration": self.iteration, "count": len(self.weights)}
        (d / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "TrainState":
        d = Path(directory)
        meta = json.loads((d / "state.json").read_text())
        n = meta.pop("count")
        weights = [np.array(load_tensor(d / f"weight_{i}.tnsr")) for i in range(n)]
        momentum = [np.array(load_tensor(d / f"momentum_{i}.tnsr")) for i in range(n)]
        return cls(weights, momentum, **meta)


def sgd_momentum_step(state: TrainState, grads) -> TrainState:
    """Classic momentum: ``m <- mu*m + g``, ``w <- w - lr*m``."""
    if len(grads) != len(state.weights):
        raise ShapeError(f"{len(grads)} gradients for {len(state.weights)} weights")
    momentum, weights = [], []
    for w, m, g in zip(state.weights, state.momentum, grads):
        if g.shape != w.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weight {w.shape}")
        m_new = (state.mu * m + g).astype(w.dtype)
        momentum.append(m_new)
        weights.append((w - state.lr * m_new).astype(w.dtype))
    return dataclasses.replace(state, weights=weights, momentum=momentum,
                               iteration=state.iteration + 1)
