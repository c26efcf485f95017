"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` or through pytest (the
lines are repeated in the terminal summary).
"""

import functools
import hashlib
import math
import os
import subprocess
import sys
import time
from collections import Counter, OrderedDict
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import torch

from pixeldoc import checkpoint, gradcheck
from pixeldoc.curriculum import paper_schedule, sample_task, stage_at
from pixeldoc.metrics import anls
from pixeldoc.model import ModelConfig, batch_loss, count_params, gen_loss, mae_loss
from pixeldoc.patchify import PATCH_DIM, PATCH_PX, PatchGrid, PatchSequence, choose_grid, fixed_grid, patchify, unpatchify
from pixeldoc.pipeline import overfit_tableqa, worker_threads
from pixeldoc.ppm import decode_ppm, encode_ppm
from pixeldoc.raster import PRESETS, PixelImage, RenderedDocument, WordBox
from pixeldoc.tables import generate_dataset, oracle_answer
from pixeldoc.targets import LossRole, TrainingExample, parse_bbox_prediction, sample_patch_mask, serialize_bbox_example
from pixeldoc.tokenizer import DEFAULT_TOKENIZER as tok

RESULTS: list[str] = []


def report(n: int, title: str, ok: bool, detail: str, t0: float) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({time.perf_counter() - t0:.1f}s)"
    RESULTS.append(line)
    print(line, flush=True)


# -- 1 ------------------------------------------------------------------------


def _snap_oracle(long_side: int, short_side: int) -> int:
    """Power of 4 nearest to long/short in log space, ties to the smaller, by exact squares."""
    s = 1
    # move up while the next power is strictly closer: (L/S)^2 > s * 4s
    while long_side * long_side > 4 * s * s * short_side * short_side:
        s *= 4
    return s


@functools.lru_cache(maxsize=1)
def _all_grids(budget: int):
    rows, cols = [], []
    for r in range(1, budget + 1):
        for c in range(1, budget // r + 1):
            rows.append(r)
            cols.append(c)
    return np.array(rows), np.array(cols)


def test_criterion_01_patch_budget():
    t0 = time.perf_counter()
    problems = []
    g = fixed_grid("fixed896")
    seq = patchify(PixelImage.blank(896, 896), g)
    if not (g.n_patches == 4096 and seq.patches.shape == (4096, PATCH_PX * PATCH_PX * 3) and g.patch_px == 14):
        problems.append("fixed896")
    rows, cols = _all_grids(4096)
    rng = np.random.default_rng(2024)
    sizes = np.exp(rng.uniform(0, math.log(12000), size=(500, 2))).astype(int) + 1
    for w, h in sizes.tolist():
        s = _snap_oracle(max(w, h), min(w, h))
        if w >= h:
            ok = cols == s * rows
        else:
            ok = rows == s * cols
        n = rows * cols
        best = np.flatnonzero(ok & (n == n[ok].max()))
        assert len(best) == 1
        want = (int(rows[best[0]]), int(cols[best[0]]))
        got = choose_grid(w, h)
        ratio = max(got.rows, got.cols) // min(got.rows, got.cols)
        if (got.rows, got.cols) != want or got.n_patches > 4096 or ratio not in {4**k for k in range(7)}:
            problems.append((w, h, want, (got.rows, got.cols)))
    ok = not problems and time.perf_counter() - t0 < 5
    report(1, "patch budget", ok, f"fixed896 -> 4096 patches; 500 sizes vs exhaustive enumeration, {len(problems)} mismatches", t0)
    assert ok, problems[:5]


# -- 2 ------------------------------------------------------------------------


def test_criterion_02_mae_mask_ratio():
    t0 = time.perf_counter()
    bad = 0
    for n in (100, 256, 4096):
        want = int(Fraction(15, 100) * n)  # floor for positive values
        for seed in range(10_000):
            m = sample_patch_mask(n, 0.15, seed)
            if len(m) != want or len(set(m)) != want or min(m) < 0 or max(m) >= n:
                bad += 1
    ok = bad == 0 and time.perf_counter() - t0 < 5
    report(2, "MAE mask ratio", ok, f"30,000 draws (counts 15/38/614), {bad} bad", t0)
    assert bad == 0


# -- 3 ------------------------------------------------------------------------


def test_criterion_03_gradient_check():
    t0 = time.perf_counter()
    cfg = gradcheck.small_config()
    assert cfg.d_model == 16 and cfg.n_encoder_layers == 1 and cfg.n_decoder_layers == 1
    worst = {}
    for label, params in (("init", None), ("perturbed", gradcheck.generic_params(cfg))):
        from pixeldoc.model import init_params

        params = params if params is not None else init_params(cfg)
        for head, task in gradcheck.HEAD_TASKS.items():
            res = gradcheck.check_gradients(params, cfg, gradcheck.head_batch(task), per_tensor=6)
            worst[f"{head}/{label}"] = max(r.rel_error for r in res)
    max_err = max(worst.values())
    elapsed = time.perf_counter() - t0
    ok = max_err < 1e-4 and elapsed < 120
    report(3, "gradient check", ok, f"{len(worst)} head/point checks, worst relative error {max_err:.2e}", t0)
    assert max_err < 1e-4, worst


# -- 4 ------------------------------------------------------------------------


def test_criterion_04_overfit():
    t0 = time.perf_counter()
    torch.set_num_threads(worker_threads())
    out = overfit_tableqa(n_examples=64, max_steps=2000, resolution=112)
    n_params = count_params(out["params"])
    drop = 1 - out["final_loss"] / out["initial_loss"]
    ok = n_params <= 1_000_000 and out["steps"] <= 2000 and out["exact_match"] >= 0.95 and drop >= 0.8
    detail = (
        f"{n_params} params, {out['steps']} steps, loss {out['initial_loss']:.3f} -> {out['final_loss']:.4f} "
        f"({drop:.1%} drop), EM {out['exact_match']:.3f} on 64 questions"
    )
    report(4, "overfit sanity run", ok, detail, t0)
    assert ok


# -- 5 ------------------------------------------------------------------------


def test_criterion_05_tableqa_oracle():
    t0 = time.perf_counter()
    mismatched = unrecoverable = 0
    for doc, qa in generate_dataset(10_000, 77, threads=worker_threads()):
        if oracle_answer(qa.table_ref, qa.provenance) != qa.answer:
            mismatched += 1
        kind = qa.provenance["kind"]
        if kind == "row_count":
            good = qa.answer == str(len(qa.table_ref.rows))
        elif kind == "col_count":
            good = qa.answer == str(len(qa.table_ref.header))
        elif kind == "caption":
            good = doc.full_text.splitlines()[0] == qa.answer
        else:
            good = any(w.text == qa.answer for w in doc.words)
        unrecoverable += not good
    ok = mismatched == 0 and unrecoverable == 0 and time.perf_counter() - t0 < 60
    report(5, "table-QA oracle", ok, f"10,000 pairs, {mismatched} oracle mismatches, {unrecoverable} unrecoverable answers", t0)
    assert mismatched == 0 and unrecoverable == 0


# -- 6 ------------------------------------------------------------------------


def _brute_distance(a: str, b: str) -> int:
    @functools.lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return d(i + 1, j + 1)
        return 1 + min(d(i + 1, j), d(i, j + 1), d(i + 1, j + 1))

    return d(0, 0)


def _brute_anls(pred: str, golds, tau: float = 0.5) -> float:
    p = " ".join(pred.lower().split())
    best = 0.0
    for g in golds:
        g = " ".join(g.lower().split())
        if not p and not g:
            s = 1.0
        else:
            s = 1 - _brute_distance(p, g) / max(len(p), len(g))
        best = max(best, s if s >= tau else 0.0)
    return best


def test_criterion_06_anls_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    alphabet = list("abcAB  xyz")
    mismatches = 0
    for _ in range(1000):
        def rand():
            return "".join(rng.choice(alphabet, size=int(rng.integers(0, 12))))

        pred = rand()
        golds = [rand() for _ in range(int(rng.integers(1, 4)))]
        if rng.random() < 0.3:  # near-miss pairs exercise the threshold region
            golds[0] = pred[:-1] + "q" if pred else "q"
        if anls(pred, golds) != _brute_anls(pred, golds):
            mismatches += 1
    examples = [anls("piano", ["piano"]), anls("pianos", ["piano"]), anls("blue", ["red"])]
    ex_ok = abs(examples[0] - 1.0) <= 1e-9 and abs(examples[1] - 0.8333333333333334) <= 1e-9 and abs(examples[2]) <= 1e-9
    ok = mismatches == 0 and ex_ok and time.perf_counter() - t0 < 5
    report(6, "ANLS oracle", ok, f"1,000 random pairs, {mismatches} mismatches; examples {[round(e, 4) for e in examples]}", t0)
    assert ok


# -- 7 ------------------------------------------------------------------------


def test_criterion_07_curriculum():
    t0 = time.perf_counter()
    sched = paper_schedule(0.01)
    bounds_ok = sched.boundaries == (500, 4000, 4550, 6050)
    transitions = [s for s in range(1, sched.total_steps) if stage_at(sched, s).index != stage_at(sched, s - 1).index]
    bounds_ok &= transitions == [500, 4000, 4550]
    worst = 0.0
    for stage in sched.stages:
        counts = Counter(sample_task(sched, s, seed=0) for s in range(stage.start, stage.end))
        if set(counts) != set(stage.active_tasks):
            worst = 1.0
        for task in stage.active_tasks:
            worst = max(worst, abs(counts[task] / stage.steps - 1 / len(stage.active_tasks)))
    ok = bounds_ok and worst <= 0.02 and time.perf_counter() - t0 < 60
    report(7, "curriculum fidelity", ok, f"boundaries {list(sched.boundaries)}, max per-stage frequency deviation {worst:.4f}", t0)
    assert ok


# -- 8 ------------------------------------------------------------------------


def _run_cli(*argv):
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parents[1] / "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    subprocess.run([sys.executable, "-m", "pixeldoc", *argv], check=True, env=env, capture_output=True)


def _hashes(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_08_determinism(tmp_path):
    t0 = time.perf_counter()
    for run in ("a", "b"):
        _run_cli("gen-tableqa", "--n", "100", "--seed", "31", "--out", str(tmp_path / f"ds_{run}"))
        _run_cli("pretrain", "--steps-override", "100", "--seed", "31", "--out", str(tmp_path / f"pt_{run}"))
    ds_a, ds_b = _hashes(tmp_path / "ds_a"), _hashes(tmp_path / "ds_b")
    pt_a, pt_b = _hashes(tmp_path / "pt_a"), _hashes(tmp_path / "pt_b")
    n_log = len((tmp_path / "pt_a" / "loss_log.csv").read_text().splitlines()) - 1
    ok = ds_a == ds_b and len(ds_a) == 201 and pt_a == pt_b and n_log == 100 and time.perf_counter() - t0 < 600
    report(8, "determinism", ok, f"{len(ds_a)} dataset files and {len(pt_a)} pretrain files identical across runs", t0)
    assert ok


# -- 9 ------------------------------------------------------------------------


def _random_text(rng) -> str:
    out = []
    for _ in range(int(rng.integers(0, 20))):
        cp = int(rng.choice([rng.integers(0, 0x80), rng.integers(0x80, 0x800), rng.integers(0x800, 0xD800), rng.integers(0x10000, 0x110000)]))
        out.append(chr(cp))
    return "".join(out)


def test_criterion_09_round_trips():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    fails = Counter()
    for k in range(1000):
        g = PatchGrid(int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        img = PixelImage(g.target_width, g.target_height, rng.integers(0, 256, size=(g.target_height, g.target_width, 3), dtype=np.uint8))
        fails["patchify"] += unpatchify(patchify(img, g)) != img

        x, y, w, h = (int(v) for v in rng.integers(0, 5000, size=4))
        doc = RenderedDocument(PixelImage.blank(1, 1), (WordBox("w", x, y, w + 1, h + 1),), "w", PRESETS[0], 0)
        ex = serialize_bbox_example(doc, 0, "text_to_box")
        fails["bbox"] += parse_bbox_prediction(ex.target_tokens) != (x, y, x + w + 1, y + h + 1)

        w, h = (int(v) for v in rng.integers(1, 40, size=2))
        img = PixelImage(w, h, rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        fails["ppm"] += decode_ppm(encode_ppm(img)) != img

        s = _random_text(rng)
        fails["tokenizer"] += tok.decode(tok.encode(s)) != s

        params = OrderedDict()
        for j in range(int(rng.integers(1, 5))):
            shape = tuple(int(v) for v in rng.integers(1, 5, size=int(rng.integers(0, 4))))
            arr = rng.standard_normal(shape) * 10.0 ** rng.integers(-300, 300)
            if arr.size and rng.random() < 0.2:
                arr.flat[0] = rng.choice([np.inf, -np.inf, np.nan, -0.0])
            params[f"t{j}.{_random_text(rng)}"] = torch.from_numpy(np.asarray(arr, dtype=np.float64))
        cfg = ModelConfig(seed=int(rng.integers(2**62)))
        back, cfg2, _ = checkpoint.loads(checkpoint.dumps(params, cfg))
        same = cfg2 == cfg and list(back) == list(params)
        same = same and all(back[n].shape == params[n].shape and back[n].numpy().tobytes() == params[n].numpy().tobytes() for n in params)
        fails["checkpoint"] += not same
    total = sum(fails.values())
    ok = total == 0 and time.perf_counter() - t0 < 60
    report(9, "round trips", ok, "1,000 cases each: " + ", ".join(f"{k} {v} failures" for k, v in fails.items()), t0)
    assert total == 0, fails


# -- 10 -----------------------------------------------------------------------


def _with_tail(ex: TrainingExample, tail) -> TrainingExample:
    return TrainingExample(
        ex.image, ex.prefix_tokens, ex.target_tokens + tuple(tail), ex.roles + (LossRole.IGNORE,) * len(tail), ex.task_tag
    )


def test_criterion_10_loss_masking():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    differing = controls_failed = 0
    # token level: any IGNORE position, logits held fixed
    for _ in range(300):
        T = int(rng.integers(1, 30))
        logits = torch.from_numpy(rng.standard_normal((T, tok.vocab_size)) * 3)
        roles = [LossRole(int(r)) for r in rng.integers(0, 5, size=T)]
        targets = rng.integers(0, tok.vocab_size, size=T)
        perturbed = targets.copy()
        ign = [i for i, r in enumerate(roles) if r is LossRole.IGNORE]
        perturbed[ign] = rng.integers(0, tok.vocab_size, size=len(ign))
        differing += not torch.equal(gen_loss(logits, targets.tolist(), roles)[0], gen_loss(logits, perturbed.tolist(), roles)[0])
        live = [i for i, r in enumerate(roles) if r is not LossRole.IGNORE]
        if live:  # control: a scored position must move the loss
            perturbed[live[0]] = (targets[live[0]] + 1) % tok.vocab_size
            controls_failed += torch.equal(gen_loss(logits, targets.tolist(), roles)[0], gen_loss(logits, perturbed.tolist(), roles)[0])
    # model level: ignored tail targets of full examples (batched, mixed heads)
    cfg = gradcheck.small_config()
    params = gradcheck.generic_params(cfg)
    for seed in range(10):
        batch = [_with_tail(ex, rng.integers(0, 256, size=4).tolist()) for task in ("RQA", "BB", "MDTG") for ex in gradcheck.head_batch(task, n=1, seed=seed)]
        alt = [_with_tail(TrainingExample(ex.image, ex.prefix_tokens, ex.target_tokens[:-4], ex.roles[:-4], ex.task_tag), rng.integers(0, 256, size=4).tolist()) for ex in batch]
        with torch.no_grad():
            differing += not torch.equal(batch_loss(params, cfg, batch)[0], batch_loss(params, cfg, alt)[0])
    # MAE: targets of unmasked patches
    for seed in range(30):
        grid = PatchGrid(4, 4)
        seq = PatchSequence(grid, rng.random((16, PATCH_DIM)))
        mask = sample_patch_mask(16, 0.25, seed)
        target = seq.patches.copy()
        visible = [i for i in range(16) if i not in mask]
        target[visible] = rng.random((len(visible), PATCH_DIM)) * 5 - 2
        with torch.no_grad():
            differing += not torch.equal(mae_loss(params, cfg, seq, mask), mae_loss(params, cfg, seq, mask, target))
    ok = differing == 0 and controls_failed == 0 and time.perf_counter() - t0 < 60
    report(10, "loss-masking invariance", ok, f"340 perturbation trials, {differing} not bit-identical", t0)
    assert differing == 0 and controls_failed == 0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
