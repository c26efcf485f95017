"""Supervised examples for the four pretraining objectives.

Generative examples are (image, prefix tokens, target tokens, per-target loss
role); MAE examples carry only an image and the indices of hidden patches.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import MaskEmptyError, UnparseableBoxError
from .raster import (
    PixelImage,
    RenderedDocument,
    StylePreset,
    WordBox,
    apply_mask_rectangles,
    overlay_question_banner,
    validate_spans,
)
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

MAE_RATIO = 0.15
PHRASE_RATIO = 0.15
MAX_SPAN_WORDS = 3


class LossRole(enum.IntEnum):
    OCR = 0
    MLM = 1
    QA = 2
    BB = 3
    IGNORE = 4


TASKS = ("MAE", "MDTG", "RQA", "BB")


@dataclass(frozen=True, eq=False)
class TrainingExample:
    image: PixelImage
    prefix_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    roles: tuple[LossRole, ...]
    task_tag: str
    mae_mask: tuple[int, ...] | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.roles) != len(self.target_tokens):
            raise ValueError(f"{len(self.roles)} roles for {len(self.target_tokens)} target tokens")
        if self.task_tag == "MAE":
            if not self.mae_mask or self.target_tokens:
                raise ValueError("MAE examples need a non-empty patch mask and no token targets")
        elif self.mae_mask:
            raise ValueError("generative examples cannot carry a patch mask")


def _floor_frac(ratio: float, n: int) -> int:
    return math.floor(Fraction(repr(ratio)) * n)


def _round_half_up(ratio: float, n: int) -> int:
    return math.floor(Fraction(repr(ratio)) * n + Fraction(1, 2))


def sample_patch_mask(n_patches: int, ratio: float = MAE_RATIO, seed: int = 0) -> list[int]:
    """``floor(ratio * n_patches)`` distinct patch indices, uniform without replacement."""
    if not 0 < ratio < 1:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    if n_patches < 1:
        raise ValueError("n_patches must be >= 1")
    k = _floor_frac(ratio, n_patches)
    if k == 0:
        raise MaskEmptyError(f"mask would be empty: floor({ratio} * {n_patches}) == 0")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n_patches, size=k, replace=False))


def sample_phrase_spans(doc: RenderedDocument, word_ratio: float = PHRASE_RATIO, seed: int = 0) -> list[tuple[int, int]]:
    """Disjoint spans of 1-3 words covering ``round(word_ratio * n_words)`` words."""
    n = len(doc.words)
    if n < 1:
        raise ValueError("document has no words")
    target = min(_round_half_up(word_ratio, n), n)
    rng = np.random.default_rng(seed)
    taken = np.zeros(n, dtype=bool)
    spans: list[tuple[int, int]] = []
    covered = 0
    for _ in range(50 * n):
        if covered >= target:
            break
        length = min(int(rng.integers(1, MAX_SPAN_WORDS + 1)), target - covered)
        start = int(rng.integers(0, n - length + 1))
        if taken[start : start + length].any():
            continue
        taken[start : start + length] = True
        spans.append((start, start + length))
        covered += length
    # placement can stall on dense docs; top up with single free words
    for i in range(n):
        if covered >= target:
            break
        if not taken[i]:
            taken[i] = True
            spans.append((i, i + 1))
            covered += 1
    return sorted(spans)


def word_char_offsets(doc: RenderedDocument) -> list[tuple[int, int]]:
    """Character range of every word inside ``doc.full_text``."""
    offsets = []
    pos = 0
    for w in doc.words:
        start = doc.full_text.index(w.text, pos)
        offsets.append((start, start + len(w.text)))
        pos = start + len(w.text)
    return offsets


def build_mdtg_example(doc: RenderedDocument, spans, tokenizer: Tokenizer = DEFAULT_TOKENIZER, seed: int = 0) -> TrainingExample:
    spans = validate_spans(spans, len(doc.words))
    image = apply_mask_rectangles(doc, spans)
    masked_chars = np.zeros(len(doc.full_text), dtype=bool)
    offsets = word_char_offsets(doc)
    for s, e in spans:
        for a, b in offsets[s:e]:
            masked_chars[a:b] = True
    tokens: list[int] = []
    roles: list[LossRole] = []
    for ch, masked in zip(doc.full_text, masked_chars):
        ids = tokenizer.encode(ch)
        tokens.extend(ids)
        roles.extend([LossRole.MLM if masked else LossRole.OCR] * len(ids))
    tokens.append(tokenizer.end_id)
    roles.append(LossRole.OCR)
    return TrainingExample(
        image,
        (tokenizer.task_id("MDTG"),),
        tuple(tokens),
        tuple(roles),
        "MDTG",
        seed=seed,
        meta={"spans": [list(s) for s in spans]},
    )


def box_text(box: WordBox) -> str:
    return f"{box.x} {box.y} {box.x2} {box.y2}"


def serialize_bbox_example(
    doc: RenderedDocument,
    word_index: int,
    direction: str,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    seed: int = 0,
) -> TrainingExample:
    if not 0 <= word_index < len(doc.words):
        raise IndexError(f"word index {word_index} out of range for {len(doc.words)} words")
    box = doc.words[word_index]
    coords = tokenizer.encode(box_text(box))
    text = tokenizer.encode(box.text)
    if direction == "text_to_box":
        prefix, target = [tokenizer.bb_id, *text], [*coords, tokenizer.end_id]
    elif direction == "box_to_text":
        prefix, target = [tokenizer.bb_id, *coords], [*text, tokenizer.end_id]
    else:
        raise ValueError(f"unknown bbox direction {direction!r}")
    return TrainingExample(
        doc.image,
        tuple(prefix),
        tuple(target),
        (LossRole.BB,) * len(target),
        "BB",
        seed=seed,
        meta={"word_index": word_index, "direction": direction},
    )


def serialize_phrase_bbox_example(
    doc: RenderedDocument, span: tuple[int, int], tokenizer: Tokenizer = DEFAULT_TOKENIZER, seed: int = 0
) -> TrainingExample:
    """text_to_box for a run of words; the target box is the union of word boxes."""
    (s, e), = validate_spans([span], len(doc.words))
    words = doc.words[s:e]
    x1, y1 = min(w.x for w in words), min(w.y for w in words)
    x2, y2 = max(w.x2 for w in words), max(w.y2 for w in words)
    phrase = " ".join(w.text for w in words)
    prefix = [tokenizer.bb_id, *tokenizer.encode(phrase)]
    target = [*tokenizer.encode(f"{x1} {y1} {x2} {y2}"), tokenizer.end_id]
    return TrainingExample(doc.image, tuple(prefix), tuple(target), (LossRole.BB,) * len(target), "BB", seed=seed)


_INT = re.compile(r"\d+")


def parse_bbox_prediction(tokens, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> tuple[int, int, int, int]:
    ids = list(tokens)
    if tokenizer.end_id in ids:
        ids = ids[: ids.index(tokenizer.end_id)]
    text = tokenizer.decode(ids)
    parts = text.split()
    if len(parts) != 4 or not all(_INT.fullmatch(p) for p in parts):
        raise UnparseableBoxError(f"unparseable box: {text!r}")
    x1, y1, x2, y2 = (int(p) for p in parts)
    if x2 <= x1 or y2 <= y1:
        raise UnparseableBoxError(f"unparseable box: degenerate extent {text!r}")
    return x1, y1, x2, y2


def build_rqa_example(
    doc: RenderedDocument,
    question: str,
    answer: str,
    style: StylePreset,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    seed: int = 0,
) -> TrainingExample:
    if not answer:
        raise ValueError("answer must be non-empty")
    banner = overlay_question_banner(doc, question, style)
    target = [*tokenizer.encode(answer), tokenizer.end_id]
    return TrainingExample(
        banner.image,
        (tokenizer.qa_id, *tokenizer.encode(question)),
        tuple(target),
        (LossRole.QA,) * len(target),
        "RQA",
        seed=seed,
        meta={"question": question, "answer": answer},
    )


def build_mae_example(image: PixelImage, n_patches: int, ratio: float = MAE_RATIO, seed: int = 0) -> TrainingExample:
    mask = sample_patch_mask(n_patches, ratio, seed)
    return TrainingExample(image, (), (), (), "MAE", tuple(mask), seed=seed)


def roles_rle(roles) -> list[list]:
    out: list[list] = []
    for r in roles:
        name = LossRole(r).name
        if out and out[-1][0] == name:
            out[-1][1] += 1
        else:
            out.append([name, 1])
    return out


def roles_from_rle(rle) -> tuple[LossRole, ...]:
    return tuple(LossRole[name] for name, count in rle for _ in range(count))


def example_record(ex: TrainingExample, image_path: str, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> dict:
    return {
        "task_tag": ex.task_tag,
        "image_path": image_path,
        "prefix_text": tokenizer.decode(ex.prefix_tokens),
        "target_text": tokenizer.decode(ex.target_tokens),
        "roles": roles_rle(ex.roles),
        "mae_mask": list(ex.mae_mask) if ex.mae_mask else [],
        "seed": ex.seed,
        "prefix_tokens": list(ex.prefix_tokens),
        "target_tokens": list(ex.target_tokens),
    }


def example_from_record(rec: dict, image: PixelImage) -> TrainingExample:
    return TrainingExample(
        image,
        tuple(rec["prefix_tokens"]),
        tuple(rec["target_tokens"]),
        roles_from_rle(rec["roles"]),
        rec["task_tag"],
        tuple(rec["mae_mask"]) or None,
        rec.get("seed", 0),
    )
