"""Deterministic text/table rasterizer with exact word bounding boxes.

All layout is done on a monospace grid of 8x8 glyph cells scaled by an integer
``font_scale``, so every word box is the exact union of its glyph cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import font8x8
from .errors import InvalidSpansError, TableOverflowError, UnsupportedGlyphError

if TYPE_CHECKING:
    from .tables import TableSpec

RGB = tuple[int, int, int]

MASK_COLOR: RGB = (128, 128, 128)
BANNER_PADDING = 2
PATCH_BUDGET = 4096


@dataclass(frozen=True, eq=False)
class PixelImage:
    """RGB image; ``pixels`` is a (height, width, 3) uint8 array, row-major."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel array shape {px.shape} != {(self.height, self.width, 3)}")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def blank(cls, width: int, height: int, color: RGB = (255, 255, 255)) -> PixelImage:
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color
        return cls(width, height, px)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> PixelImage:
        h, w = pixels.shape[:2]
        return cls(w, h, pixels)

    def __eq__(self, other):
        if not isinstance(other, PixelImage):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def __repr__(self):
        return f"PixelImage({self.width}x{self.height})"


@dataclass(frozen=True)
class StylePreset:
    id: str
    font_scale: int
    text_color: RGB
    background_color: RGB
    border_color: RGB
    border_thickness: int
    cell_padding: int
    separator_rule: str  # "all" | "horizontal-only" | "none"

    @property
    def cell(self) -> int:
        return font8x8.CELL * self.font_scale


PRESETS: tuple[StylePreset, ...] = (
    StylePreset("classic", 1, (0, 0, 0), (255, 255, 255), (0, 0, 0), 1, 2, "all"),
    StylePreset("ledger", 1, (20, 40, 110), (250, 246, 224), (90, 90, 160), 1, 3, "horizontal-only"),
    StylePreset("large", 2, (30, 30, 30), (236, 244, 255), (40, 70, 140), 2, 2, "all"),
    StylePreset("dark", 1, (240, 240, 240), (24, 28, 40), (200, 180, 60), 1, 2, "all"),
    StylePreset("plain", 2, (120, 10, 10), (255, 255, 255), (255, 255, 255), 0, 4, "none"),
)


def get_preset(key: str | int) -> StylePreset:
    if isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
        return PRESETS[int(key)]
    for p in PRESETS:
        if p.id == key:
            return p
    raise KeyError(f"unknown style preset {key!r}")


def random_style(seed: int) -> StylePreset:
    """Seeded uniform preset with font_scale drawn from {1, 2, 3}."""
    rng = np.random.default_rng(seed)
    preset = PRESETS[int(rng.integers(len(PRESETS)))]
    return replace(preset, font_scale=int(rng.integers(1, 4)))


@dataclass(frozen=True)
class WordBox:
    text: str
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def shifted(self, dx: int = 0, dy: int = 0) -> WordBox:
        return replace(self, x=self.x + dx, y=self.y + dy)


@dataclass(frozen=True)
class RenderedDocument:
    image: PixelImage
    words: tuple[WordBox, ...]
    full_text: str
    style: StylePreset
    seed: int
    # leading words that belong to an overlaid question banner
    banner_words: int = field(default=0)

    def to_annotation(self) -> dict:
        return {
            "full_text": self.full_text,
            "words": [{"text": b.text, "x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in self.words],
            "style_id": self.style.id,
            "font_scale": self.style.font_scale,
            "banner_words": self.banner_words,
            "seed": self.seed,
        }

    @classmethod
    def from_annotation(cls, ann: dict, image: PixelImage) -> RenderedDocument:
        style = get_preset(ann["style_id"])
        if "font_scale" in ann:
            style = replace(style, font_scale=int(ann["font_scale"]))
        words = tuple(WordBox(w["text"], w["x"], w["y"], w["w"], w["h"]) for w in ann["words"])
        return cls(image, words, ann["full_text"], style, int(ann["seed"]), int(ann.get("banner_words", 0)))


def check_glyphs(text: str) -> None:
    for ch in text:
        if ch != "\n" and not font8x8.is_supported(ch):
            raise UnsupportedGlyphError(ch)


def _draw_text(px: np.ndarray, text: str, x: int, y: int, scale: int, color: RGB) -> None:
    cell = font8x8.CELL * scale
    for i, ch in enumerate(text):
        mask = font8x8.glyph(ch)
        if scale > 1:
            mask = np.kron(mask, np.ones((scale, scale), dtype=bool)).astype(bool)
        x0 = x + i * cell
        px[y : y + cell, x0 : x0 + cell][mask] = color


def _wrap(text: str, capacity: int) -> list[list[str]]:
    """Greedy word wrap; ``capacity`` is the line length in glyph cells."""
    lines: list[list[str]] = []
    for para in text.split("\n"):
        line: list[str] = []
        used = 0
        for word in para.split(" "):
            if not word:
                continue
            for k in range(0, len(word), capacity):
                piece = word[k : k + capacity]
                need = used + 1 + len(piece) if line else len(piece)
                if line and need > capacity:
                    lines.append(line)
                    line, need = [], len(piece)
                line.append(piece)
                used = need
        lines.append(line)
    return lines


def _layout_lines(lines: list[list[str]], cell: int, x0: int = 0, y0: int = 0) -> list[WordBox]:
    boxes = []
    for li, line in enumerate(lines):
        col = 0
        for word in line:
            boxes.append(WordBox(word, x0 + col * cell, y0 + li * cell, len(word) * cell, cell))
            col += len(word) + 1
    return boxes


def render_text_document(text: str, style: StylePreset, max_width: int, seed: int = 0) -> RenderedDocument:
    """Render plain text with greedy wrapping at ``max_width`` pixels."""
    if not text:
        raise ValueError("text must be non-empty")
    check_glyphs(text)
    cell = style.cell
    if max_width < cell:
        raise ValueError(f"max_width {max_width} is narrower than one glyph cell ({cell}px)")
    lines = _wrap(text, max_width // cell)
    # drop trailing blank lines so the image ends at the last text row
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise ValueError("text contains no words")
    boxes = _layout_lines(lines, cell)
    img = PixelImage.blank(max_width, len(lines) * cell, style.background_color)
    for b in boxes:
        _draw_text(img.pixels, b.text, b.x, b.y, style.font_scale, style.text_color)
    full_text = "\n".join(" ".join(line) for line in lines)
    return RenderedDocument(img, tuple(boxes), full_text, style, seed)


def _table_layout(table: TableSpec, style: StylePreset):
    cell, pad, bt = style.cell, style.cell_padding, style.border_thickness
    grid_rows = [list(table.header)] + [list(r) for r in table.rows]
    texts = [[" ".join(c.split()) for c in row] for row in grid_rows]
    col_w = [max(len(texts[r][c]) for r in range(len(texts))) * cell + 2 * pad for c in range(table.n_cols)]
    row_h = cell + 2 * pad
    vsep = bt if style.separator_rule == "all" else 0
    hsep = bt if style.separator_rule in ("all", "horizontal-only") else 0
    grid_w = 2 * bt + sum(col_w) + (table.n_cols - 1) * vsep
    grid_h = 2 * bt + len(texts) * row_h + (len(texts) - 1) * hsep
    caption = " ".join(table.caption.split()) if table.caption else ""
    cap_h = row_h if caption else 0
    width = max(grid_w, len(caption) * cell + 2 * pad)
    return texts, col_w, row_h, vsep, hsep, grid_w, grid_h, caption, cap_h, width, cap_h + grid_h


def _check_budget(width: int, height: int, budget: int = PATCH_BUDGET) -> None:
    from .errors import BudgetTooSmallError
    from .patchify import choose_grid

    try:
        grid = choose_grid(width, height, budget)
    except BudgetTooSmallError as exc:
        raise TableOverflowError(f"table overflow: {width}x{height}px does not fit the patch budget") from exc
    if grid.target_width < width or grid.target_height < height:
        raise TableOverflowError(
            f"table overflow: {width}x{height}px at font scale 1 exceeds the "
            f"{budget}-patch grid {grid.target_width}x{grid.target_height}"
        )


def render_table_image(table: TableSpec, style: StylePreset, seed: int = 0) -> RenderedDocument:
    """Render a table as a bordered grid with an optional caption above it."""
    for s in [table.caption or "", *table.header, *(c for r in table.rows for c in r)]:
        check_glyphs(s.replace("\n", " "))
    min_layout = _table_layout(table, replace(style, font_scale=1))
    _check_budget(min_layout[9], min_layout[10])

    texts, col_w, row_h, vsep, hsep, grid_w, grid_h, caption, cap_h, width, height = _table_layout(table, style)
    cell, pad, bt = style.cell, style.cell_padding, style.border_thickness
    img = PixelImage.blank(width, height, style.background_color)
    px = img.pixels
    boxes: list[WordBox] = []
    lines: list[str] = []

    if caption:
        cap_boxes = _layout_lines([caption.split(" ")], cell, pad, pad)
        boxes.extend(cap_boxes)
        lines.append(caption)

    gy = cap_h
    if bt:
        px[gy : gy + bt, :grid_w] = style.border_color
        px[gy + grid_h - bt : gy + grid_h, :grid_w] = style.border_color
        px[gy : gy + grid_h, :bt] = style.border_color
        px[gy : gy + grid_h, grid_w - bt : grid_w] = style.border_color
    col_x = []
    x = bt
    for c, w in enumerate(col_w):
        col_x.append(x)
        x += w
        if c < len(col_w) - 1 and vsep:
            px[gy : gy + grid_h, x : x + vsep] = style.border_color
            x += vsep
    y = gy + bt
    for r, row in enumerate(texts):
        for c, text in enumerate(row):
            if text:
                boxes.extend(_layout_lines([text.split(" ")], cell, col_x[c] + pad, y + pad))
        lines.append(" ".join(t for t in row if t))
        y += row_h
        if r < len(texts) - 1 and hsep:
            px[y : y + hsep, :grid_w] = style.border_color
            y += hsep

    for b in boxes:
        _draw_text(px, b.text, b.x, b.y, style.font_scale, style.text_color)
    return RenderedDocument(img, tuple(boxes), "\n".join(lines), style, seed)


def overlay_question_banner(doc: RenderedDocument, question: str, style: StylePreset) -> RenderedDocument:
    """Stack a banner with the rendered question on top of ``doc``."""
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    check_glyphs(question)
    cell = style.cell
    inner = doc.image.width - 2 * BANNER_PADDING
    if inner < cell:
        raise ValueError(f"document width {doc.image.width} too narrow for a banner at font scale {style.font_scale}")
    lines = [ln for ln in _wrap(question, inner // cell) if ln]
    banner_h = len(lines) * cell + 2 * BANNER_PADDING
    q_boxes = _layout_lines(lines, cell, BANNER_PADDING, BANNER_PADDING)

    px = np.empty((banner_h + doc.image.height, doc.image.width, 3), dtype=np.uint8)
    px[:banner_h] = style.background_color
    px[banner_h:] = doc.image.pixels
    for b in q_boxes:
        _draw_text(px, b.text, b.x, b.y, style.font_scale, style.text_color)

    words = tuple(q_boxes) + tuple(b.shifted(dy=banner_h) for b in doc.words)
    q_text = "\n".join(" ".join(line) for line in lines)
    return RenderedDocument(
        PixelImage.from_array(px),
        words,
        q_text + "\n" + doc.full_text,
        doc.style,
        doc.seed,
        banner_words=len(q_boxes) + doc.banner_words,
    )


def validate_spans(spans: Iterable[Sequence[int]], n_words: int) -> list[tuple[int, int]]:
    """Normalize ``(start, end)`` half-open spans; reject overlap and out-of-range."""
    out = sorted((int(s), int(e)) for s, e in spans)
    prev_end = 0
    for s, e in out:
        if not (0 <= s < e <= n_words):
            raise InvalidSpansError(f"invalid spans: ({s}, {e}) out of range for {n_words} words")
        if s < prev_end:
            raise InvalidSpansError(f"invalid spans: ({s}, {e}) overlaps a previous span")
        prev_end = e
    return out


def apply_mask_rectangles(doc: RenderedDocument, spans, mask_color: RGB = MASK_COLOR) -> PixelImage:
    spans = validate_spans(spans, len(doc.words))
    px = doc.image.pixels.copy()
    for s, e in spans:
        for b in doc.words[s:e]:
            px[b.y : b.y2, b.x : b.x2] = mask_color
    return PixelImage.from_array(px)
