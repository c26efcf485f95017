"""Central finite-difference checks of the model's backward pass."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch

from .model import ModelConfig, batch_loss, forward_backward
from .pipeline import make_task_example

# entries where both derivatives are smaller than this are compared absolutely
TINY = 1e-6


@dataclass
class GradCheckResult:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric))
        if denom < TINY:
            return abs(self.analytic - self.numeric) / TINY
        return abs(self.analytic - self.numeric) / denom


def _loss(params, cfg, batch, weights=None) -> float:
    with torch.no_grad():
        return float(batch_loss(params, cfg, batch, weights)[0])


def check_gradients(
    params: OrderedDict,
    cfg: ModelConfig,
    batch,
    eps: float = 1e-4,
    per_tensor: int = 6,
    seed: int = 0,
    weights=None,
) -> list[GradCheckResult]:
    """Compare analytic gradients with central differences.

    Every tensor is probed at its largest-gradient entries plus random ones,
    and once along a random direction covering the whole tensor (reported
    with index ``("dir",)``).
    """
    rng = np.random.default_rng(seed)
    _, grads = forward_backward(params, cfg, batch, weights)
    work = OrderedDict((k, v.clone()) for k, v in params.items())
    results = []
    for name, g in grads.items():
        t = work[name]
        flat_g = g.reshape(-1)
        n = flat_g.numel()
        top = torch.argsort(flat_g.abs(), descending=True)[: per_tensor // 2].tolist()
        rand = rng.choice(n, size=min(n, per_tensor - len(top)), replace=False).tolist()
        for idx in dict.fromkeys(top + rand):
            orig = t.view(-1)[idx].item()
            t.view(-1)[idx] = orig + eps
            up = _loss(work, cfg, batch, weights)
            t.view(-1)[idx] = orig - eps
            down = _loss(work, cfg, batch, weights)
            t.view(-1)[idx] = orig
            results.append(GradCheckResult(name, (idx,), float(flat_g[idx]), (up - down) / (2 * eps)))
        direction = torch.from_numpy(rng.standard_normal(tuple(t.shape))).to(t.dtype)
        direction /= direction.norm()
        base = t.clone()
        work[name] = base + eps * direction
        up = _loss(work, cfg, batch, weights)
        work[name] = base - eps * direction
        down = _loss(work, cfg, batch, weights)
        work[name] = base
        results.append(GradCheckResult(name, ("dir",), float((g * direction).sum()), (up - down) / (2 * eps)))
    return results


HEAD_TASKS = {"MAE": "MAE", "OCR+MLM": "MDTG", "QA": "RQA", "BB": "BB", "TABLEQA": "TABLEQA"}


def head_batch(task: str, resolution: int = 56, n: int = 2, seed: int = 0):
    return [make_task_example(task, seed * 1000 + i, resolution) for i in range(n)]


def small_config(**overrides) -> ModelConfig:
    base = dict(
        d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1, n_mae_decoder_layers=1, d_ff=32,
        max_patches=64, max_text_len=512, seed=3,
    )  # fmt: skip
    base.update(overrides)
    return ModelConfig(**base)


def generic_params(cfg: ModelConfig, noise: float = 0.3, seed: int = 1) -> OrderedDict:
    """Initial parameters plus Gaussian noise, so no gradient is degenerate."""
    from .model import init_params

    rng = np.random.default_rng(seed)
    return OrderedDict(
        (k, v + torch.from_numpy(rng.normal(0.0, noise, size=tuple(v.shape))).to(v.dtype))
        for k, v in init_params(cfg).items()
    )
