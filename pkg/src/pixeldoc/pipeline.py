"""Synthetic corpora, per-task example construction and the training loops."""

from __future__ import annotations

import csv
import math
import os
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .curriculum import CurriculumSchedule, sample_task, stage_at
from .model import AdamWState, Hyperparameters, ModelConfig, adamw_step, forward_backward, generate_greedy, init_params
from .metrics import exact_match
from .patchify import PATCH_PX, PatchGrid, patchify, resize_bilinear
from .raster import PixelImage, RenderedDocument, WordBox, random_style, render_text_document
from .tables import TableLimits, dataset_sample
from .targets import (
    TrainingExample,
    build_mae_example,
    build_mdtg_example,
    build_rqa_example,
    sample_phrase_spans,
    serialize_bbox_example,
)
from .tokenizer import DEFAULT_TOKENIZER

_ONSETS = ("b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_ATTRIBUTES = ("color", "capital", "size", "owner", "founder", "mascot", "river", "motto")

DOC_WIDTH = 448


def derive_seed(*parts: int) -> int:
    return int(np.random.default_rng([int(p) & (2**63 - 1) for p in parts]).integers(2**62))


def pseudo_word(rng: np.random.Generator, capital: bool = False) -> str:
    n = int(rng.integers(1, 4))
    w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n))
    return w.capitalize() if capital else w


def synthetic_text(seed: int, min_words: int = 12, max_words: int = 30) -> str:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_words, max_words + 1))
    words = [pseudo_word(rng, capital=(i == 0)) for i in range(n)]
    return " ".join(words) + "."


def synthetic_passage(seed: int) -> tuple[str, str, str]:
    """(passage, question, answer) built from a handful of attribute facts."""
    rng = np.random.default_rng(seed)
    n_facts = int(rng.integers(2, 5))
    facts = []
    for _ in range(n_facts):
        attr = _ATTRIBUTES[rng.integers(len(_ATTRIBUTES))]
        facts.append((attr, pseudo_word(rng, capital=True), pseudo_word(rng)))
    passage = " ".join(f"The {a} of {e} is {v}." for a, e, v in facts)
    attr, entity, value = facts[int(rng.integers(n_facts))]
    return passage, f"What is the {attr} of {entity}?", value


def text_document(seed: int) -> RenderedDocument:
    return render_text_document(synthetic_text(seed), random_style(seed), DOC_WIDTH, seed)


def resize_document(doc: RenderedDocument, width: int, height: int) -> RenderedDocument:
    """Resize the image and rescale word boxes into the new pixel frame."""
    sx, sy = width / doc.image.width, height / doc.image.height
    words = []
    for b in doc.words:
        x, y = int(math.floor(b.x * sx + 0.5)), int(math.floor(b.y * sy + 0.5))
        x2 = max(x + 1, min(width, int(math.floor(b.x2 * sx + 0.5))))
        y2 = max(y + 1, min(height, int(math.floor(b.y2 * sy + 0.5))))
        words.append(WordBox(b.text, min(x, width - 1), min(y, height - 1), x2 - min(x, width - 1), y2 - min(y, height - 1)))
    return replace(doc, image=resize_bilinear(doc.image, width, height), words=tuple(words))


def _square(img: PixelImage, side: int) -> PixelImage:
    return resize_bilinear(img, side, side)


def make_task_example(task: str, seed: int, resolution: int, limits: TableLimits = TableLimits()) -> TrainingExample:
    """One training example for ``task`` with a ``resolution``x``resolution`` image."""
    if resolution % PATCH_PX:
        raise ValueError(f"resolution {resolution} is not a multiple of {PATCH_PX}")
    rng = np.random.default_rng(seed)
    tok = DEFAULT_TOKENIZER
    if task == "MAE":
        img = _square(text_document(seed).image, resolution)
        n = (resolution // PATCH_PX) ** 2
        return build_mae_example(img, n, seed=seed)
    if task == "MDTG":
        doc = text_document(seed)
        ex = build_mdtg_example(doc, sample_phrase_spans(doc, seed=seed), tok, seed=seed)
        return replace(ex, image=_square(ex.image, resolution))
    if task == "BB":
        doc = resize_document(text_document(seed), resolution, resolution)
        idx = int(rng.integers(len(doc.words)))
        direction = ("text_to_box", "box_to_text")[int(rng.integers(2))]
        return serialize_bbox_example(doc, idx, direction, tok, seed=seed)
    if task == "RQA":
        passage, question, answer = synthetic_passage(seed)
        style = random_style(seed)
        doc = render_text_document(passage, style, DOC_WIDTH, seed)
        ex = build_rqa_example(doc, question, answer, style, tok, seed=seed)
        return replace(ex, image=_square(ex.image, resolution))
    if task == "TABLEQA":
        doc, qa = dataset_sample(0, seed, limits)
        ex = build_rqa_example(doc, qa.question, qa.answer, doc.style, tok, seed=seed)
        return replace(ex, image=_square(ex.image, resolution), meta={**ex.meta, "template_id": qa.template_id})
    raise ValueError(f"unknown task {task!r}")


LOG_COLUMNS = ("step", "stage", "task", "total", "mae", "ocr", "mlm", "qa", "bb")


class LossLog:
    """Append-only CSV loss log, flushed after every row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(LOG_COLUMNS)
        self._fh.flush()
        self._last_step = -1

    def write(self, step: int, stage: int, task: str, losses: dict) -> None:
        if step <= self._last_step:
            raise ValueError(f"loss log steps must increase ({step} after {self._last_step})")
        self._last_step = step
        row = [step, stage, task, repr(losses["total"])]
        row += [repr(losses[k]) if k in losses else "" for k in ("MAE", "OCR", "MLM", "QA", "BB")]
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class PretrainResult:
    params: OrderedDict
    steps: int
    last_losses: dict


def pretrain(
    schedule: CurriculumSchedule,
    cfg: ModelConfig,
    out_dir,
    seed: int = 0,
    steps: int | None = None,
    hyper: Hyperparameters | None = None,
    resolutions: dict[int, int] | None = None,
    batch_size: int | None = None,
    log=None,
) -> PretrainResult:
    """Run the curriculum sequentially; writes ``loss_log.csv``, ``schedule.json``, ``checkpoint.pdfg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = schedule.total_steps if steps is None else steps
    if not 0 <= total <= schedule.total_steps:
        raise ValueError(f"steps must be in [0, {schedule.total_steps}] for this schedule")
    if hyper is None:
        hyper = Hyperparameters(warmup_steps=max(1, int(math.floor(schedule.scale * 10_000 + 0.5))))
    resolutions = resolutions or {}
    (out / "schedule.json").write_text(schedule.to_json())
    params = init_params(cfg)
    state = AdamWState()
    losses: dict = {}
    with LossLog(out / "loss_log.csv") as loss_log:
        for step in range(total):
            stage = stage_at(schedule, step)
            task = sample_task(schedule, step, seed)
            res = resolutions.get(stage.resolution, stage.resolution)
            n = batch_size or stage.batch_size
            batch = [make_task_example(task, derive_seed(seed, step, b), res) for b in range(n)]
            losses, grads = forward_backward(params, cfg, batch)
            params = adamw_step(params, grads, hyper, step + 1, state)
            loss_log.write(step, stage.index, task, losses)
            if log:
                log(f"step {step} stage {stage.index} {task} total {losses['total']:.4f}")
    checkpoint.save_checkpoint(out / "checkpoint.pdfg", params, cfg, {"steps": total, "seed": seed})
    return PretrainResult(params, total, losses)


# --------------------------------------------------------------------------
# overfit sanity run


OVERFIT_CONFIG = ModelConfig(
    d_model=96, n_heads=4, n_encoder_layers=2, n_decoder_layers=2, n_mae_decoder_layers=1, d_ff=192,
    max_patches=64, max_text_len=160, seed=0,
)  # fmt: skip
OVERFIT_HYPER = Hyperparameters(learning_rate=1e-3, warmup_steps=100, weight_decay=0.0, batch_size=64)


def tableqa_examples(n: int, seed: int, resolution: int, limits: TableLimits = TableLimits()) -> list[TrainingExample]:
    out = []
    for i in range(n):
        doc, qa = dataset_sample(i, seed, limits)
        ex = build_rqa_example(doc, qa.question, qa.answer, doc.style, seed=seed ^ i)
        out.append(replace(ex, image=_square(ex.image, resolution), meta={**ex.meta, "template_id": qa.template_id}))
    return out


def greedy_answers(params, cfg: ModelConfig, examples: Sequence[TrainingExample], max_len: int = 32) -> list[str]:
    tok = DEFAULT_TOKENIZER
    answers = []
    for ex in examples:
        seq = patchify(ex.image, PatchGrid.for_image(ex.image))
        answers.append(tok.decode(generate_greedy(params, cfg, seq, ex.prefix_tokens, max_len)))
    return answers


def overfit_tableqa(
    n_examples: int = 64,
    max_steps: int = 2000,
    resolution: int = 112,
    cfg: ModelConfig = OVERFIT_CONFIG,
    hyper: Hyperparameters = OVERFIT_HYPER,
    seed: int = 0,
    stop_loss: float = 5e-3,
    log=None,
) -> dict:
    """Full-batch training on a fixed set of rendered table-QA examples."""
    examples = tableqa_examples(n_examples, seed, resolution)
    params = init_params(cfg)
    state = AdamWState()
    history = []
    t0 = time.perf_counter()
    for step in range(1, max_steps + 1):
        losses, grads = forward_backward(params, cfg, examples)
        history.append(losses["total"])
        params = adamw_step(params, grads, hyper, step, state)
        if log and (step == 1 or step % 100 == 0):
            log(f"step {step} loss {losses['total']:.5f} ({time.perf_counter() - t0:.0f}s)")
        if losses["total"] < stop_loss:
            break
    preds = greedy_answers(params, cfg, examples)
    golds = [ex.meta["answer"] for ex in examples]
    em = sum(exact_match(p, [g]) for p, g in zip(preds, golds)) / len(examples)
    return {
        "params": params,
        "steps": len(history),
        "initial_loss": history[0],
        "final_loss": history[-1],
        "history": history,
        "exact_match": em,
        "predictions": preds,
        "golds": golds,
        "seconds": time.perf_counter() - t0,
    }


def worker_threads() -> int:
    env = os.environ.get("PIXELDOC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
