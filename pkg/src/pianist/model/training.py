"""AdamW with warmup + cosine decay, and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .transformer import Model, backward


@dataclass(frozen=True)
class OptimizerConfig:
    peak_lr: float = 3e-4
    warmup_steps: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0


def learning_rate(step: int, total_steps: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to ``peak_lr``, then cosine decay reaching 0 on the last step."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / cfg.warmup_steps
    span = total_steps - 1 - cfg.warmup_steps
    if span <= 0:
        return cfg.peak_lr
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, w in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if w.ndim > 1 and cfg.weight_decay:
                w *= 1.0 - lr * cfg.weight_decay
            w -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def train_steps(
    model: Model,
    examples: Sequence,
    cfg: OptimizerConfig = OptimizerConfig(),
    steps: int = 100,
    batch_size: int | None = None,
) -> list[float]:
    """Run ``steps`` AdamW updates in place and return the per-step loss.

    Each step averages gradients over ``batch_size`` consecutive examples
    (cycling; all of them by default), summed in a fixed order. The recorded
    loss is the batch mean before the update.
    """
    if not examples:
        raise ValueError("train_steps needs at least one example")
    batch_size = len(examples) if batch_size is None else batch_size
    opt = AdamW(model.params, cfg)
    trace = []
    cursor = 0
    for step in range(steps):
        batch = [examples[(cursor + j) % len(examples)] for j in range(batch_size)]
        cursor = (cursor + batch_size) % len(examples)
        total_loss = 0.0
        grads = None
        for ex in batch:
            report, g = backward(model, ex, loss_scale=1.0 / batch_size)
            total_loss += report.loss
            if grads is None:
                grads = g
            else:
                for k in grads:
                    grads[k] += g[k]
        if cfg.clip_norm is not None:
            clip_gradients(grads, cfg.clip_norm)
        opt.step(model.params, grads, learning_rate(step, steps, cfg))
        trace.append(total_loss / batch_size)
    return trace
