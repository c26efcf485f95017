"""Toy image-encoder / text-decoder transformer with an MAE pixel head.

Parameters live in a flat ``{name: tensor}`` dict (float64) and every function
is written against that dict, so training, checkpointing and gradient checks
all see the same tensors. Gradients come from torch reverse-mode autodiff.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import NumericalFailureError
from .patchify import PATCH_DIM, PATCH_PX, PatchGrid, PatchSequence, patchify, sinusoidal_pos_emb
from .targets import LossRole, TrainingExample
from .tokenizer import DEFAULT_TOKENIZER

DTYPE = torch.float64
N_ROLES = len(LossRole) - 1  # IGNORE carries no loss
ROLE_NAMES = [r.name for r in LossRole if r is not LossRole.IGNORE]


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_heads: int = 2
    n_encoder_layers: int = 1
    n_decoder_layers: int = 1
    n_mae_decoder_layers: int = 1
    d_ff: int = 64
    patch_px: int = PATCH_PX
    vocab_size: int = DEFAULT_TOKENIZER.vocab_size
    max_patches: int = 4096
    max_text_len: int = 512
    variance_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal position embeddings")
        if self.patch_px != PATCH_PX:
            raise ValueError(f"patch_px is fixed at {PATCH_PX}")
        for f in fields(self):
            if f.type == "int" and getattr(self, f.name) < (0 if f.name == "seed" else 1):
                raise ValueError(f"{f.name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 1e-4
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 1024
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


# --------------------------------------------------------------------------
# initialisation


def _block_shapes(prefix: str, d: int, ff: int, cross: bool) -> list[tuple[str, tuple]]:
    shapes: list[tuple[str, tuple]] = []
    attns = ["self_attn"] + (["cross_attn"] if cross else [])
    for k, attn in enumerate(attns, 1):
        shapes += [(f"{prefix}.ln{k}.scale", (d,)), (f"{prefix}.ln{k}.bias", (d,))]
        for proj in "qkvo":
            shapes += [(f"{prefix}.{attn}.{proj}.weight", (d, d)), (f"{prefix}.{attn}.{proj}.bias", (d,))]
    k = len(attns) + 1
    shapes += [(f"{prefix}.ln{k}.scale", (d,)), (f"{prefix}.ln{k}.bias", (d,))]
    shapes += [
        (f"{prefix}.mlp.fc1.weight", (d, ff)),
        (f"{prefix}.mlp.fc1.bias", (ff,)),
        (f"{prefix}.mlp.fc2.weight", (ff, d)),
        (f"{prefix}.mlp.fc2.bias", (d,)),
    ]
    return shapes


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    d, ff, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: list[tuple[str, tuple]] = [
        ("patch_proj.weight", (PATCH_DIM, d)),
        ("patch_proj.bias", (d,)),
        ("mask_embedding", (d,)),
    ]
    for i in range(cfg.n_encoder_layers):
        shapes += _block_shapes(f"enc.{i}", d, ff, cross=False)
    shapes += [("enc.ln_f.scale", (d,)), ("enc.ln_f.bias", (d,)), ("tok_embedding", (V, d))]
    for i in range(cfg.n_decoder_layers):
        shapes += _block_shapes(f"dec.{i}", d, ff, cross=True)
    shapes += [("dec.ln_f.scale", (d,)), ("dec.ln_f.bias", (d,)), ("lm_head.weight", (V, d))]
    for i in range(cfg.n_mae_decoder_layers):
        shapes += _block_shapes(f"mae_dec.{i}", d, ff, cross=False)
    shapes += [
        ("mae_dec.ln_f.scale", (d,)),
        ("mae_dec.ln_f.bias", (d,)),
        ("mae_head.weight", (d, PATCH_DIM)),
        ("mae_head.bias", (PATCH_DIM,)),
    ]
    return shapes


def is_norm_or_bias(name: str) -> bool:
    return name.endswith(".bias") or name.endswith(".scale")


def init_params(cfg: ModelConfig) -> OrderedDict:
    """Weights ~ N(0, 0.02), norm scales 1, biases 0; seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params: OrderedDict = OrderedDict()
    for name, shape in param_shapes(cfg):
        if name.endswith(".scale"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = torch.from_numpy(arr).to(DTYPE)
    return params


def count_params(params: Mapping[str, torch.Tensor]) -> int:
    return sum(int(t.numel()) for t in params.values())


# --------------------------------------------------------------------------
# building blocks


def _ln(x, p, name):
    return F.layer_norm(x, x.shape[-1:], p[f"{name}.scale"], p[f"{name}.bias"], eps=1e-5)


def _attention(xq, xkv, p, name, n_heads, causal=False, probs_out=None):
    B, Tq, d = xq.shape
    Tk = xkv.shape[1]
    dh = d // n_heads
    q = (xq @ p[f"{name}.q.weight"] + p[f"{name}.q.bias"]).view(B, Tq, n_heads, dh).transpose(1, 2)
    k = (xkv @ p[f"{name}.k.weight"] + p[f"{name}.k.bias"]).view(B, Tk, n_heads, dh).transpose(1, 2)
    v = (xkv @ p[f"{name}.v.weight"] + p[f"{name}.v.bias"]).view(B, Tk, n_heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if causal:
        future = torch.ones(Tq, Tk, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(future, float("-inf"))
    probs = torch.softmax(scores, dim=-1)
    if probs_out is not None:
        probs_out.append(probs)
    out = (probs @ v).transpose(1, 2).reshape(B, Tq, d)
    return out @ p[f"{name}.o.weight"] + p[f"{name}.o.bias"]


def _mlp(x, p, name):
    h = F.gelu(x @ p[f"{name}.fc1.weight"] + p[f"{name}.fc1.bias"])
    return h @ p[f"{name}.fc2.weight"] + p[f"{name}.fc2.bias"]


def _encoder_block(x, p, name, n_heads, probs_out=None):
    h = _ln(x, p, f"{name}.ln1")
    x = x + _attention(h, h, p, f"{name}.self_attn", n_heads, probs_out=probs_out)
    return x + _mlp(_ln(x, p, f"{name}.ln2"), p, f"{name}.mlp")


def _pos(n: int, d: int) -> torch.Tensor:
    return torch.from_numpy(sinusoidal_pos_emb(n, d)).to(DTYPE)


# --------------------------------------------------------------------------
# forward passes (batched internals + single-example public wrappers)


def encode_patches(params, cfg: ModelConfig, patches: torch.Tensor, mask: torch.Tensor | None = None, probs_out=None):
    """patches (B, N, 588) -> encoder states (B, N, d). ``mask`` is (B, N) bool."""
    B, N, _ = patches.shape
    if N > cfg.max_patches:
        raise ValueError(f"{N} patches exceed max_patches={cfg.max_patches}")
    x = patches @ params["patch_proj.weight"] + params["patch_proj.bias"]
    if mask is not None:
        x = torch.where(mask[..., None], params["mask_embedding"].expand_as(x), x)
    x = x + _pos(N, cfg.d_model)
    for i in range(cfg.n_encoder_layers):
        x = _encoder_block(x, params, f"enc.{i}", cfg.n_heads, probs_out)
    return _ln(x, params, "enc.ln_f")


def _mask_tensor(n: int, mae_mask) -> torch.Tensor:
    m = torch.zeros(1, n, dtype=torch.bool)
    if mae_mask is not None:
        m[0, list(mae_mask)] = True
    return m


def _patch_tensor(seq: PatchSequence) -> torch.Tensor:
    return torch.from_numpy(np.asarray(seq.patches, dtype=np.float64))[None]


def encode_image(params, cfg: ModelConfig, seq: PatchSequence, mae_mask=None) -> torch.Tensor:
    """Encoder states (N, d) for one patch sequence."""
    mask = _mask_tensor(len(seq), mae_mask) if mae_mask is not None else None
    return encode_patches(params, cfg, _patch_tensor(seq), mask)[0]


def decoder_hidden(params, cfg: ModelConfig, enc: torch.Tensor, ids: torch.Tensor, probs_out=None) -> torch.Tensor:
    """ids (B, T) -> final decoder hidden states (B, T, d)."""
    B, T = ids.shape
    if T > cfg.max_text_len:
        raise ValueError(f"{T} tokens exceed max_text_len={cfg.max_text_len}")
    x = params["tok_embedding"][ids] * math.sqrt(cfg.d_model) + _pos(T, cfg.d_model)
    for i in range(cfg.n_decoder_layers):
        name = f"dec.{i}"
        h = _ln(x, params, f"{name}.ln1")
        x = x + _attention(h, h, params, f"{name}.self_attn", cfg.n_heads, causal=True, probs_out=probs_out)
        x = x + _attention(_ln(x, params, f"{name}.ln2"), enc, params, f"{name}.cross_attn", cfg.n_heads, probs_out=probs_out)
        x = x + _mlp(_ln(x, params, f"{name}.ln3"), params, f"{name}.mlp")
    return _ln(x, params, "dec.ln_f")


def decode_text(params, cfg: ModelConfig, encoder_states: torch.Tensor, token_ids: Sequence[int], probs_out=None) -> torch.Tensor:
    """Per-position next-token logits (T, V) for one token sequence."""
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)[None]
    enc = encoder_states if encoder_states.dim() == 3 else encoder_states[None]
    h = decoder_hidden(params, cfg, enc, ids, probs_out)
    return (h @ params["lm_head.weight"].T)[0]


def mae_predict(params, cfg: ModelConfig, enc: torch.Tensor) -> torch.Tensor:
    """(B, N, d) encoder states -> (B, N, 588) pixel predictions."""
    x = enc + _pos(enc.shape[1], cfg.d_model)
    for i in range(cfg.n_mae_decoder_layers):
        x = _encoder_block(x, params, f"mae_dec.{i}", cfg.n_heads)
    x = _ln(x, params, "mae_dec.ln_f")
    return x @ params["mae_head.weight"] + params["mae_head.bias"]


def normalized_patch_targets(patches: torch.Tensor, variance_floor: float) -> torch.Tensor:
    mean = patches.mean(dim=-1, keepdim=True)
    var = patches.var(dim=-1, unbiased=False, keepdim=True)
    return (patches - mean) / torch.sqrt(var + variance_floor)


def _mae_losses(params, cfg, patches, mask, targets):
    """Per-example normalized MSE over masked patches; all tensors batched."""
    enc = encode_patches(params, cfg, patches, mask)
    pred = mae_predict(params, cfg, enc)
    tgt = normalized_patch_targets(targets, cfg.variance_floor)
    sq = ((pred - tgt) ** 2).mean(dim=-1)  # (B, N)
    m = mask.to(DTYPE)
    return (sq * m).sum(dim=1) / m.sum(dim=1)


def mae_loss(params, cfg: ModelConfig, seq: PatchSequence, mae_mask, original_patches=None) -> torch.Tensor:
    """Normalized-pixel MSE on the masked patches of one sequence.

    ``original_patches`` supplies the reconstruction targets (defaults to the
    sequence's own patches); the encoder never sees pixels of masked patches.
    """
    if not mae_mask:
        raise ValueError("mae_mask must be non-empty")
    targets = seq.patches if original_patches is None else original_patches
    tgt = torch.from_numpy(np.asarray(targets, dtype=np.float64))[None]
    return _mae_losses(params, cfg, _patch_tensor(seq), _mask_tensor(len(seq), mae_mask), tgt)[0]


def _role_weights(weights: Mapping | None) -> torch.Tensor:
    w = torch.ones(N_ROLES, dtype=DTYPE)
    for key, val in (weights or {}).items():
        role = LossRole[key] if isinstance(key, str) else LossRole(key)
        if role is not LossRole.IGNORE:
            w[int(role)] = float(val)
    return w


def _gen_losses(logits, targets, roles, weights):
    """Batched role-masked CE.

    logits (B, T, V), targets/roles (B, T) long. Returns per-example totals (B,),
    per-example per-role means (B, R) and role presence (B, R).
    """
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets[..., None])[..., 0]  # (B, T)
    onehot = F.one_hot(roles, N_ROLES + 1)[..., :N_ROLES].to(DTYPE)  # (B, T, R), IGNORE dropped
    counts = onehot.sum(dim=1)
    sums = (nll[..., None] * onehot).sum(dim=1)
    present = counts > 0
    means = torch.where(present, sums / counts.clamp(min=1), torch.zeros_like(sums))
    totals = (means * weights).sum(dim=-1)
    return totals, means, present


def gen_loss(logits, target_tokens, roles, weights: Mapping | None = None):
    """Cross-entropy per loss role for one example.

    Returns ``(total, {role_name: mean_nll})``; IGNORE positions contribute
    nothing and absent roles are omitted from the map.
    """
    logits = torch.as_tensor(logits)
    if logits.shape[0] != len(target_tokens) or len(roles) != len(target_tokens):
        raise ValueError("logits, target_tokens and roles must have equal length")
    if not len(target_tokens):
        return torch.zeros((), dtype=logits.dtype), {}
    t = torch.as_tensor(list(target_tokens), dtype=torch.long)[None]
    r = torch.as_tensor([int(x) for x in roles], dtype=torch.long)[None]
    totals, means, present = _gen_losses(logits[None], t, r, _role_weights(weights))
    per_role = {ROLE_NAMES[k]: means[0, k] for k in range(N_ROLES) if present[0, k]}
    return totals[0], per_role


# --------------------------------------------------------------------------
# batch loss + gradients


def example_patches(ex: TrainingExample) -> PatchSequence:
    return patchify(ex.image, PatchGrid.for_image(ex.image))


def _gen_batch_tensors(batch: Sequence[TrainingExample], pad_id: int):
    inputs = [list(ex.prefix_tokens) + list(ex.target_tokens[:-1]) for ex in batch]
    T = max(len(x) for x in inputs)
    Tt = max(len(ex.target_tokens) for ex in batch)
    ids = torch.full((len(batch), T), pad_id, dtype=torch.long)
    gather = torch.zeros((len(batch), Tt), dtype=torch.long)
    targets = torch.full((len(batch), Tt), pad_id, dtype=torch.long)
    roles = torch.full((len(batch), Tt), int(LossRole.IGNORE), dtype=torch.long)
    for b, ex in enumerate(batch):
        ids[b, : len(inputs[b])] = torch.as_tensor(inputs[b], dtype=torch.long)
        n, p = len(ex.target_tokens), len(ex.prefix_tokens)
        # logits at position p-1+j predict target j
        gather[b, :n] = torch.arange(p - 1, p - 1 + n)
        targets[b, :n] = torch.as_tensor(ex.target_tokens, dtype=torch.long)
        roles[b, :n] = torch.as_tensor([int(r) for r in ex.roles], dtype=torch.long)
    return ids, gather, targets, roles


def batch_loss(params, cfg: ModelConfig, batch: Sequence[TrainingExample], weights: Mapping | None = None):
    """Mean per-example loss over ``batch`` and a dict of reported components."""
    if not batch:
        raise ValueError("batch must be non-empty")
    sizes = {(ex.image.width, ex.image.height) for ex in batch}
    if len(sizes) != 1:
        raise ValueError(f"batch mixes image resolutions: {sorted(sizes)}")
    seqs = [example_patches(ex) for ex in batch]
    patches = torch.from_numpy(np.stack([s.patches for s in seqs]))
    mae_idx = [i for i, ex in enumerate(batch) if ex.task_tag == "MAE"]
    gen_idx = [i for i, ex in enumerate(batch) if ex.task_tag != "MAE"]
    per_example = []
    report: dict[str, torch.Tensor] = {}

    if mae_idx:
        N = patches.shape[1]
        mask = torch.stack([_mask_tensor(N, batch[i].mae_mask)[0] for i in mae_idx])
        p = patches[mae_idx]
        mae = _mae_losses(params, cfg, p, mask, p)
        per_example.append(mae)
        report["MAE"] = mae.mean()

    if gen_idx:
        gen = [batch[i] for i in gen_idx]
        if any(not ex.prefix_tokens or not ex.target_tokens for ex in gen):
            raise ValueError("generative examples need a non-empty prefix and target")
        enc = encode_patches(params, cfg, patches[gen_idx])
        ids, gather, targets, roles = _gen_batch_tensors(gen, DEFAULT_TOKENIZER.pad_id)
        h = decoder_hidden(params, cfg, enc, ids)
        h = h.gather(1, gather[..., None].expand(-1, -1, h.shape[-1]))
        logits = h @ params["lm_head.weight"].T
        totals, means, present = _gen_losses(logits, targets, roles, _role_weights(weights))
        per_example.append(totals)
        for k, name in enumerate(ROLE_NAMES):
            if present[:, k].any():
                report[name] = means[present[:, k], k].mean()

    total = torch.cat(per_example).mean()
    report["total"] = total
    return total, report


def forward_backward(params, cfg: ModelConfig, batch: Sequence[TrainingExample], weights: Mapping | None = None):
    """Losses (floats) and gradients (tensors, same names as ``params``)."""
    leaves = OrderedDict((k, v.detach().clone().requires_grad_(True)) for k, v in params.items())
    total, report = batch_loss(leaves, cfg, batch, weights)
    if not torch.isfinite(total):
        bad = next((k for k, v in params.items() if not torch.isfinite(v).all()), None)
        raise NumericalFailureError(bad or "loss", f"loss is {total.item()}")
    total.backward()
    grads = OrderedDict()
    for k, v in leaves.items():
        g = v.grad if v.grad is not None else torch.zeros_like(v)
        if not torch.isfinite(g).all():
            raise NumericalFailureError(k, "non-finite gradient")
        grads[k] = g.detach()
    return {k: float(v.detach()) for k, v in report.items()}, grads


# --------------------------------------------------------------------------
# optimiser


class AdamWState:
    def __init__(self):
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}


def learning_rate_at(hyper: Hyperparameters, step_index: int) -> float:
    """Linear warmup from 0 over ``warmup_steps``, then constant."""
    if hyper.warmup_steps <= 0:
        return hyper.learning_rate
    return hyper.learning_rate * min(1.0, step_index / hyper.warmup_steps)


def adamw_step(params, grads, hyper: Hyperparameters, step_index: int, state: AdamWState | None = None) -> OrderedDict:
    """One AdamW update (1-indexed ``step_index``); returns new parameter tensors.

    Weight decay is decoupled and skipped for norm scales and biases.
    """
    if step_index < 1:
        raise ValueError("step_index must be >= 1")
    state = state if state is not None else AdamWState()
    lr = learning_rate_at(hyper, step_index)
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**step_index
    c2 = 1.0 - b2**step_index
    out = OrderedDict()
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name, torch.zeros_like(p)) * b1 + (1.0 - b1) * g
            v = state.v.get(name, torch.zeros_like(p)) * b2 + (1.0 - b2) * g * g
            state.m[name], state.v[name] = m, v
            new = p
            if hyper.weight_decay and not is_norm_or_bias(name):
                new = new * (1.0 - lr * hyper.weight_decay)
            out[name] = new - lr * (m / c1) / (torch.sqrt(v / c2) + hyper.adam_epsilon)
    return out


# --------------------------------------------------------------------------
# inference


@torch.no_grad()
def generate_greedy(params, cfg: ModelConfig, seq: PatchSequence, prefix_tokens: Sequence[int], max_len: int) -> list[int]:
    """Greedy decoding until END or ``max_len`` new tokens; END is not returned.

    ``torch.argmax`` returns the first maximal index, so ties go to the
    lowest token id.
    """
    if not prefix_tokens:
        raise ValueError("prefix must contain at least one token")
    enc = encode_image(params, cfg, seq)[None]
    tokens = list(prefix_tokens)
    out: list[int] = []
    end = DEFAULT_TOKENIZER.end_id
    for _ in range(max_len):
        if len(tokens) >= cfg.max_text_len:
            break
        ids = torch.as_tensor(tokens, dtype=torch.long)[None]
        h = decoder_hidden(params, cfg, enc, ids)[:, -1]
        nxt = int(torch.argmax(h @ params["lm_head.weight"].T, dim=-1)[0])
        if nxt == end:
            break
        out.append(nxt)
        tokens.append(nxt)
    return out
