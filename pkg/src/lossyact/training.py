"""Training loop shared by baseline and compressed runs."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import AdaptiveController
from .errors import NumericalAbort
from .nn.data import Dataset
from .nn.net import Network, PassThroughStore
from .nn.optim import TrainState, sgd_momentum_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    lr: float = 0.02
    momentum: float = 0.9
    lr_step: int = 0  # iterations between decays; 0 disables
    lr_decay: float = 0.1
    eval_every: int = 0  # 0: evaluate at epoch ends only
    seed: int = 0


@dataclass
class RunResult:
    rows: list[dict] = field(default_factory=list)
    final_accuracy: float = 0.0
    final_loss: float = 0.0
    wall_time: float = 0.0
    state: TrainState | None = None
    iterations: int = 0
    compressed_ratios: list = field(default_factory=list)  # (iteration, layer, ratio)


def accuracy(net: Network, ds: Dataset, batch: int = 500) -> float:
    correct = 0
    for k in range(0, len(ds), batch):
        pred = net.logits(ds.images[k:k + batch]).argmax(axis=1)
        correct += int((pred == ds.labels[k:k + batch]).sum())
    return correct / len(ds)


def train(specs, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig,
          controller: AdaptiveController | None = None, checkpoint_dir=None,
          dtype=np.float32, max_iterations: int | None = None) -> RunResult:
    """Run momentum SGD; with a controller, convolution inputs are stored compressed."""
    net = Network(specs, train_ds.images.shape[1:], seed=cfg.seed, dtype=dtype)
    net.store = controller if controller is not None else PassThroughStore()
    state = TrainState(net.params, lr=cfg.lr, mu=cfg.momentum, batch_size=cfg.batch_size)
    per_epoch = len(train_ds) // cfg.batch_size
    total = cfg.epochs * per_epoch
    if max_iterations is not None:
        total = min(total, max_iterations)
    conv_layers = net.conv_layers
    result = RunResult()
    last_good = state
    start = time.perf_counter()
    t = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_ds))
        for b in range(per_epoch):
            if t >= total:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if controller is not None:
                controller.begin_iteration(t)
            loss = net.forward(train_ds.images[idx], train_ds.labels[idx])
            if not math.isfinite(loss):
                if checkpoint_dir is not None:
                    last_good.save(checkpoint_dir)
                raise NumericalAbort(f"non-finite loss at iteration {t}")
            collect = controller is not None and controller.is_collection_iteration(t)
            grads = net.backward(taps=collect)
            if collect:
                if not controller.calibrated:
                    geometry = {i: (net.specs[i].kernel_h, net.specs[i].kernel_w,
                                    net.specs[i].stride, net.specs[i].padding) for i in conv_layers}
                    controller.calibrate(net.taps, geometry, cfg.batch_size)
                for layer in conv_layers:
                    act, out_grad = net.taps[layer]
                    controller.collect_stats(layer, act, out_grad,
                                             state.momentum[net.conv_weight_index(layer)],
                                             cfg.batch_size)
            last_good = state
            state = sgd_momentum_step(state, grads)
            net.params = state.weights
            if cfg.lr_step and (t + 1) % cfg.lr_step == 0:
                state.lr *= cfg.lr_decay
            row = {"iteration": t, "train_loss": loss, "eval_accuracy": None}
            if controller is not None:
                handles = {h.layer: h for h in controller.saved}
                for layer in conv_layers:
                    row[f"ratio_layer{layer}"] = handles[layer].ratio
                    if handles[layer].blob is not None:
                        result.compressed_ratios.append((t, layer, handles[layer].ratio))
                controller.end_iteration()
            end_of_epoch = b == per_epoch - 1 or t == total - 1
            if end_of_epoch or (cfg.eval_every and (t + 1) % cfg.eval_every == 0):
                row["eval_accuracy"] = accuracy(net, test_ds)
            result.rows.append(row)
            t += 1
    if controller is not None:
        controller.close()
    result.wall_time = time.perf_counter() - start
    result.iterations = t
    result.state = state
    result.final_accuracy = accuracy(net, test_ds)
    result.final_loss = result.rows[-1]["train_loss"] if result.rows else float("nan")
    return result


def write_rows(path, rows) -> None:
    if not rows:
        return
    columns = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c]
                        for c in columns])
