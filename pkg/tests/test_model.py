import math
from collections import OrderedDict
from dataclasses import replace

import numpy as np
import pytest
import torch

from pixeldoc import checkpoint
from pixeldoc.errors import NumericalFailureError
from pixeldoc.gradcheck import generic_params, head_batch, small_config
from pixeldoc.model import (
    AdamWState,
    Hyperparameters,
    ModelConfig,
    adamw_step,
    batch_loss,
    count_params,
    decode_text,
    encode_image,
    forward_backward,
    gen_loss,
    generate_greedy,
    init_params,
    learning_rate_at,
    mae_loss,
)
from pixeldoc.patchify import PATCH_DIM, PatchGrid, PatchSequence
from pixeldoc.targets import LossRole
from pixeldoc.tokenizer import DEFAULT_TOKENIZER as tok


@pytest.fixture(scope="module")
def cfg():
    return small_config()


@pytest.fixture(scope="module")
def params(cfg):
    return generic_params(cfg)


def seq(n=9, seed=0):
    side = int(math.isqrt(n))
    rng = np.random.default_rng(seed)
    return PatchSequence(PatchGrid(side, side), rng.random((side * side, PATCH_DIM)))


def test_init_deterministic(cfg):
    a, b = init_params(cfg), init_params(cfg)
    assert list(a) == list(b) and all(torch.equal(a[k], b[k]) for k in a)
    c = init_params(replace(cfg, seed=cfg.seed + 1))
    assert not torch.equal(a["tok_embedding"], c["tok_embedding"])


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(n_encoder_layers=0)


def test_encoder_shape(params, cfg):
    out = encode_image(params, cfg, seq(16))
    assert out.shape == (16, cfg.d_model) and out.dtype == torch.float64


def test_encoder_overlength(params, cfg):
    with pytest.raises(ValueError):
        encode_image(params, cfg, seq(81))


def test_masked_patch_content_ignored(params, cfg):
    s = seq(9)
    p = s.patches.copy()
    p[4] = np.random.default_rng(9).random(PATCH_DIM)
    a = encode_image(params, cfg, s, mae_mask=[4, 7])
    b = encode_image(params, cfg, PatchSequence(s.grid, p), mae_mask=[4, 7])
    assert torch.equal(a, b)


def test_patch_swap_changes_output(params, cfg):
    s = seq(4)
    p = s.patches[[1, 0, 2, 3]]
    a = encode_image(params, cfg, s)
    b = encode_image(params, cfg, PatchSequence(s.grid, p))
    assert not torch.equal(a[[1, 0, 2, 3]], b)


def test_decoder_causality(params, cfg):
    enc = encode_image(params, cfg, seq(4))
    ids = [tok.qa_id, 10, 20, 30, 40]
    base = decode_text(params, cfg, enc, ids)
    assert base.shape == (5, cfg.vocab_size)
    for t in range(4):
        alt = list(ids)
        alt[t + 1] = 99
        out = decode_text(params, cfg, enc, alt)
        assert torch.equal(out[: t + 1], base[: t + 1])
        assert not torch.equal(out[t + 1 :], base[t + 1 :])


def test_attention_rows_sum_to_one(params, cfg):
    probs = []
    enc = encode_image(params, cfg, seq(9))
    decode_text(params, cfg, enc, [tok.qa_id, 1, 2, 3], probs_out=probs)
    assert len(probs) == 2 * cfg.n_decoder_layers
    for p in probs:
        assert torch.allclose(p.sum(-1), torch.ones(p.shape[:-1], dtype=p.dtype), atol=1e-6)
    causal = probs[0][0, 0]
    assert torch.all(causal.triu(1) == 0)


def test_cross_attention_is_live(params, cfg):
    enc = encode_image(params, cfg, seq(9))
    ids = [tok.qa_id, 5, 6]
    assert not torch.equal(decode_text(params, cfg, enc, ids), decode_text(params, cfg, torch.zeros_like(enc), ids))


def test_decoder_overlength(params, cfg):
    enc = encode_image(params, cfg, seq(4))
    with pytest.raises(ValueError):
        decode_text(params, cfg, enc, [1] * (cfg.max_text_len + 1))


def test_mae_loss_zero_for_exact_prediction(cfg):
    p = init_params(cfg)
    p["mae_head.weight"] = torch.zeros_like(p["mae_head.weight"])
    # constant patches normalise to zero, matching a zero prediction
    s = PatchSequence(PatchGrid(2, 2), np.full((4, PATCH_DIM), 0.3))
    assert float(mae_loss(p, cfg, s, [0, 3])) == 0.0


def test_mae_loss_shift_invariant(params, cfg):
    s = seq(9, seed=2)
    target = s.patches.copy()
    shifted = target.copy()
    shifted[3] += 0.25
    a = mae_loss(params, cfg, s, [3, 5], target)
    b = mae_loss(params, cfg, s, [3, 5], shifted)
    assert math.isclose(float(a), float(b), rel_tol=1e-12)


def test_mae_loss_ignores_unmasked_targets(params, cfg):
    s = seq(9, seed=2)
    target = s.patches.copy()
    target[[0, 1, 8]] = np.random.default_rng(3).random((3, PATCH_DIM))
    assert torch.equal(mae_loss(params, cfg, s, [3, 5]), mae_loss(params, cfg, s, [3, 5], target))


def test_mae_loss_requires_mask(params, cfg):
    with pytest.raises(ValueError):
        mae_loss(params, cfg, seq(4), [])


def test_gen_loss_uniform_logits():
    V = tok.vocab_size
    logits = torch.zeros(4, V, dtype=torch.float64)
    total, per = gen_loss(logits, [1, 2, 3, tok.end_id], [LossRole.OCR, LossRole.MLM, LossRole.OCR, LossRole.QA])
    assert set(per) == {"OCR", "MLM", "QA"}
    for v in per.values():
        assert float(v) == math.log(V)
    assert math.isclose(float(total), 3 * math.log(V), rel_tol=1e-15)


def test_gen_loss_all_ignore():
    total, per = gen_loss(torch.randn(3, 20, dtype=torch.float64), [1, 2, 3], [LossRole.IGNORE] * 3)
    assert float(total) == 0.0 and per == {}


def test_gen_loss_ignore_positions_excluded():
    logits = torch.randn(5, 30, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    roles = [LossRole.OCR, LossRole.IGNORE, LossRole.QA, LossRole.IGNORE, LossRole.OCR]
    a, _ = gen_loss(logits, [1, 2, 3, 4, 5], roles)
    b, _ = gen_loss(logits, [1, 29, 3, 17, 5], roles)
    assert torch.equal(a, b)


def test_gen_loss_weights_and_length_check():
    logits = torch.zeros(2, 10, dtype=torch.float64)
    total, per = gen_loss(logits, [1, 2], [LossRole.OCR, LossRole.MLM], {"MLM": 0.0, "OCR": 2.0})
    assert math.isclose(float(total), 2 * math.log(10))
    with pytest.raises(ValueError):
        gen_loss(logits, [1], [LossRole.OCR])


def test_duplicate_batch_same_loss_and_grads(params, cfg):
    batch = head_batch("RQA", n=2)
    la, ga = forward_backward(params, cfg, batch)
    lb, gb = forward_backward(params, cfg, batch + batch)
    assert math.isclose(la["total"], lb["total"], rel_tol=1e-12)
    for k in ga:
        assert torch.allclose(ga[k], gb[k], rtol=1e-10, atol=1e-14)


def test_forward_backward_reports_roles(params, cfg):
    losses, grads = forward_backward(params, cfg, head_batch("MDTG", n=1))
    assert {"OCR", "MLM", "total"} <= set(losses) and "MAE" not in losses
    assert set(grads) == set(params)
    losses, _ = forward_backward(params, cfg, head_batch("MAE", n=1))
    assert set(losses) == {"MAE", "total"}


def test_mixed_resolution_batch_rejected(params, cfg):
    with pytest.raises(ValueError):
        batch_loss(params, cfg, head_batch("BB", resolution=28, n=1) + head_batch("BB", resolution=56, n=1))


def test_numerical_failure_names_tensor(params, cfg):
    bad = OrderedDict(params)
    bad["patch_proj.bias"] = torch.full_like(params["patch_proj.bias"], float("nan"))
    with pytest.raises(NumericalFailureError, match="patch_proj.bias"):
        forward_backward(bad, cfg, head_batch("BB", n=1))


def test_adamw_zero_grad_identity():
    p = OrderedDict(w=torch.randn(3, 3, dtype=torch.float64))
    g = OrderedDict(w=torch.zeros(3, 3, dtype=torch.float64))
    out = adamw_step(p, g, Hyperparameters(weight_decay=0.0, warmup_steps=0), 1)
    assert torch.equal(out["w"], p["w"])


def test_warmup_learning_rate():
    h = Hyperparameters(learning_rate=1e-3, warmup_steps=100)
    assert learning_rate_at(h, 1) == 1e-3 / 100
    assert learning_rate_at(h, 100) == 1e-3 and learning_rate_at(h, 5000) == 1e-3


def test_adamw_two_steps_closed_form():
    h = Hyperparameters(learning_rate=0.1, warmup_steps=4, weight_decay=0.5)
    p = OrderedDict([("a.weight", torch.tensor([1.0, -2.0], dtype=torch.float64)), ("a.bias", torch.tensor([3.0], dtype=torch.float64))])
    g1 = OrderedDict([("a.weight", torch.tensor([0.5, -1.0], dtype=torch.float64)), ("a.bias", torch.tensor([2.0], dtype=torch.float64))])
    g2 = OrderedDict([("a.weight", torch.tensor([-0.25, 4.0], dtype=torch.float64)), ("a.bias", torch.tensor([1.0], dtype=torch.float64))])
    state = AdamWState()
    p1 = adamw_step(p, g1, h, 1, state)
    p2 = adamw_step(p1, g2, h, 2, state)

    def ref(x, gs, decay):
        m = v = 0.0
        for t, g in enumerate(gs, 1):
            lr = 0.1 * t / 4
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            if decay:
                x = x * (1 - lr * 0.5)
            x = x - lr * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        return x

    assert math.isclose(float(p2["a.weight"][0]), ref(1.0, [0.5, -0.25], True), rel_tol=1e-12)
    assert math.isclose(float(p2["a.weight"][1]), ref(-2.0, [-1.0, 4.0], True), rel_tol=1e-12)
    assert math.isclose(float(p2["a.bias"][0]), ref(3.0, [2.0, 1.0], False), rel_tol=1e-12)


def test_adamw_rejects_step_zero():
    with pytest.raises(ValueError):
        adamw_step(OrderedDict(), OrderedDict(), Hyperparameters(), 0)


def test_greedy_deterministic(params, cfg):
    ex = head_batch("RQA", n=1)[0]
    from pixeldoc.model import example_patches

    s = example_patches(ex)
    a = generate_greedy(params, cfg, s, ex.prefix_tokens, 8)
    assert a == generate_greedy(params, cfg, s, ex.prefix_tokens, 8)
    assert len(a) <= 8 and tok.end_id not in a


def test_greedy_stops_at_end(cfg):
    p = init_params(cfg)
    p["lm_head.weight"] = torch.zeros_like(p["lm_head.weight"])
    p["lm_head.weight"][tok.end_id] = 1.0
    p["dec.ln_f.bias"] = torch.ones_like(p["dec.ln_f.bias"])
    p["dec.ln_f.scale"] = torch.zeros_like(p["dec.ln_f.scale"])
    assert generate_greedy(p, cfg, seq(4), [tok.qa_id], 10) == []


def test_checkpoint_round_trip(tmp_path, params, cfg):
    path = tmp_path / "m.pdfg"
    checkpoint.save_checkpoint(path, params, cfg, {"steps": 3})
    back, cfg2, header = checkpoint.load_checkpoint(path)
    assert cfg2 == cfg and header == {"steps": 3}
    assert list(back) == list(params) and all(torch.equal(back[k], params[k]) for k in params)
    assert path.read_bytes()[:4] == b"PDFG"
    assert checkpoint.dumps(back, cfg2, header) == path.read_bytes()


def test_checkpoint_errors(params, cfg):
    data = checkpoint.dumps(params, cfg)
    for bad in (b"XXXX" + data[4:], data[:-1], data + b"\0", data[:4] + b"\x02" + data[5:]):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(bad)


def test_param_count(cfg):
    assert count_params(init_params(cfg)) > 0
