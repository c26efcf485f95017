"""Synthetic tables and the eleven template-based table QA generators.

Rows and columns are numbered from 1 over data rows; the header row is not
counted. The answer oracle re-resolves a question's structured query by
scanning the table, independently of how the generator picked its cell.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import QueryResolutionError, TemplateNotApplicableError
from .raster import PRESETS, RenderedDocument, render_table_image

ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth")

HEADER_NAMES = (
    "Name", "Price", "City", "Year", "Count", "Code", "Type", "Rank", "Score", "Size",
    "Level", "Group", "Date", "Team", "Model", "Color", "Stock", "Owner", "Region", "Total",
)  # fmt: skip

CAPTION_WORDS = (
    "Annual", "Sales", "Results", "Summary", "Inventory", "Regional", "Weekly", "Report",
    "Stats", "Budget", "Survey", "Scores", "Index", "List", "Orders", "Data",
)  # fmt: skip


@dataclass(frozen=True)
class TableLimits:
    max_rows: int = 5
    max_cols: int = 5
    cell_alphabet: str = string.ascii_lowercase + string.digits
    max_cell_len: int = 5


@dataclass(frozen=True)
class TableSpec:
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    caption: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if not self.rows or not self.header:
            raise ValueError("table needs at least one data row and one column")
        if any(len(r) != len(self.header) for r in self.rows):
            raise ValueError("every row must have exactly n_cols cells")
        if len(set(self.header)) != len(self.header):
            raise ValueError("column names must be unique")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.header)

    def to_json(self) -> dict:
        return {"caption": self.caption, "header": list(self.header), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_json(cls, obj: dict) -> TableSpec:
        return cls(tuple(obj["header"]), tuple(tuple(r) for r in obj["rows"]), obj.get("caption"))


@dataclass(frozen=True)
class QATemplate:
    id: int
    pattern: str
    answer_kind: str  # cell_lookup | row_count | col_count | caption


TEMPLATES: tuple[QATemplate, ...] = (
    QATemplate(1, "What is the cell value in row [row_number] and column [column_number]?", "cell_lookup"),
    QATemplate(2, "What is the cell value in column [column_number] and row [row_number]?", "cell_lookup"),
    QATemplate(3, "What does the cell in the row [row_number] and column [column_number] contain?", "cell_lookup"),
    QATemplate(4, "What does the cell in column [column_number] and row [row_number] contain?", "cell_lookup"),
    QATemplate(5, "What is the cell value in column [column_name] and row [row_number]?", "cell_lookup"),
    QATemplate(
        6, "What is the value of cell where column is [column_name] and row number is [row_number]?", "cell_lookup"
    ),
    QATemplate(
        7, "What is the value in the cell in [column ordinal] column where the row contains [row entry]?", "cell_lookup"
    ),
    QATemplate(8, "What is the value for [column 1st entries]?", "cell_lookup"),
    QATemplate(9, "How many rows are there in this table?", "row_count"),
    QATemplate(10, "How many columns are there in this table?", "col_count"),
    QATemplate(11, "What is the caption of the table?", "caption"),
)
TEMPLATE_BY_ID = {t.id: t for t in TEMPLATES}


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    table_ref: TableSpec
    template_id: int
    provenance: dict = field(hash=False)


def _fill(pattern: str, **values: str) -> str:
    keys = {
        "row_number": "[row_number]",
        "column_number": "[column_number]",
        "column_name": "[column_name]",
        "ordinal": "[column ordinal]",
        "entry": "[row entry]",
        "key": "[column 1st entries]",
    }
    for name, value in values.items():
        pattern = pattern.replace(keys[name], value)
    return pattern


def generate_table(seed: int, limits: TableLimits = TableLimits()) -> TableSpec:
    if limits.max_rows < 1 or limits.max_cols < 1:
        raise ValueError("max_rows and max_cols must be >= 1")
    rng = np.random.default_rng(seed)
    n_rows = int(rng.integers(1, limits.max_rows + 1))
    n_cols = int(rng.integers(1, limits.max_cols + 1))
    if n_cols <= len(HEADER_NAMES):
        header = [HEADER_NAMES[i] for i in rng.permutation(len(HEADER_NAMES))[:n_cols]]
    else:
        header = [f"Col{j + 1}" for j in range(n_cols)]
    alphabet = limits.cell_alphabet

    def token() -> str:
        n = int(rng.integers(1, limits.max_cell_len + 1))
        return "".join(alphabet[i] for i in rng.integers(len(alphabet), size=n))

    rows = [[token() for _ in range(n_cols)] for _ in range(n_rows)]
    caption = None
    if rng.random() < 0.5:
        n_words = int(rng.integers(1, 4))
        caption = " ".join(CAPTION_WORDS[i] for i in rng.integers(len(CAPTION_WORDS), size=n_words))
    return TableSpec(tuple(header), tuple(tuple(r) for r in rows), caption)


def _unique_body_cells(table: TableSpec) -> list[tuple[int, int]]:
    counts: dict[str, int] = {}
    for row in table.rows:
        for v in row:
            counts[v] = counts.get(v, 0) + 1
    return [(r, c) for r, row in enumerate(table.rows) for c, v in enumerate(row) if counts[v] == 1]


def _unique_first_column(table: TableSpec) -> list[int]:
    col = [row[0] for row in table.rows]
    return [r for r, v in enumerate(col) if col.count(v) == 1]


def applicability(table: TableSpec, template_id: int) -> str | None:
    """``None`` when the template can be instantiated on ``table``, else the reason."""
    if template_id not in TEMPLATE_BY_ID:
        return f"unknown template id {template_id}"
    if template_id == 7:
        if table.n_cols < 2:
            return "needs at least two columns"
        if not _unique_body_cells(table):
            return "no cell value is unique in the table"
    elif template_id == 8:
        if table.n_cols < 2:
            return "needs at least two columns"
        if not _unique_first_column(table):
            return "no unique value in the first column"
    elif template_id == 11 and not table.caption:
        return "table has no caption"
    return None


def applicable_templates(table: TableSpec) -> list[int]:
    return [t.id for t in TEMPLATES if applicability(table, t.id) is None]


def instantiate_qa(table: TableSpec, template_id: int, seed: int) -> QAPair:
    reason = applicability(table, template_id)
    if reason is not None:
        raise TemplateNotApplicableError(f"template {template_id} not applicable: {reason}")
    rng = np.random.default_rng(seed)
    tpl = TEMPLATE_BY_ID[template_id]

    if template_id in (1, 2, 3, 4, 5, 6):
        r = int(rng.integers(table.n_rows))
        c = int(rng.integers(table.n_cols))
        answer = table.rows[r][c]
        if template_id <= 4:
            question = _fill(tpl.pattern, row_number=str(r + 1), column_number=str(c + 1))
            prov = {"kind": "cell", "row": r + 1, "col": c + 1}
        else:
            name = table.header[c]
            question = _fill(tpl.pattern, column_name=f'"{name}"', row_number=str(r + 1))
            prov = {"kind": "cell_by_name", "column_name": name, "row": r + 1}
    elif template_id == 7:
        entries = _unique_body_cells(table)
        er, ec = entries[int(rng.integers(len(entries)))]
        targets = [c for c in range(min(table.n_cols, len(ORDINALS))) if c != ec]
        c = targets[int(rng.integers(len(targets)))]
        answer = table.rows[er][c]
        entry = table.rows[er][ec]
        question = _fill(tpl.pattern, ordinal=ORDINALS[c], entry=f'"{entry}"')
        prov = {"kind": "cell_by_entry", "ordinal": ORDINALS[c], "entry": entry}
    elif template_id == 8:
        keys = _unique_first_column(table)
        r = keys[int(rng.integers(len(keys)))]
        key = table.rows[r][0]
        answer = table.rows[r][1]
        question = _fill(tpl.pattern, key=f'"{key}"')
        prov = {"kind": "cell_by_key", "key": key}
    elif template_id == 9:
        question, answer, prov = tpl.pattern, str(table.n_rows), {"kind": "row_count"}
    elif template_id == 10:
        question, answer, prov = tpl.pattern, str(table.n_cols), {"kind": "col_count"}
    else:
        question, answer, prov = tpl.pattern, table.caption, {"kind": "caption"}
    return QAPair(question, answer, table, template_id, prov)


def oracle_answer(table: TableSpec, query: dict) -> str:
    """Resolve a structured query against ``table`` by direct scanning."""
    kind = query.get("kind")
    try:
        if kind == "row_count":
            return str(len(table.rows))
        if kind == "col_count":
            return str(len(table.header))
        if kind == "caption":
            if not table.caption:
                raise QueryResolutionError("query resolution: table has no caption")
            return table.caption
        if kind == "cell":
            r, c = int(query["row"]), int(query["col"])
            if not (1 <= r <= len(table.rows) and 1 <= c <= len(table.header)):
                raise QueryResolutionError(f"query resolution: cell ({r}, {c}) outside table")
            return table.rows[r - 1][c - 1]
        if kind == "cell_by_name":
            name, r = query["column_name"], int(query["row"])
            matches = [j for j, h in enumerate(table.header) if h == name]
            if len(matches) != 1 or not 1 <= r <= len(table.rows):
                raise QueryResolutionError(f"query resolution: column {name!r} row {r}")
            return table.rows[r - 1][matches[0]]
        if kind == "cell_by_entry":
            c = ORDINALS.index(query["ordinal"])
            hits = [row for row in table.rows if query["entry"] in row]
            if len(hits) != 1 or c >= len(table.header):
                raise QueryResolutionError(f"query resolution: entry {query['entry']!r} matches {len(hits)} rows")
            return hits[0][c]
        if kind == "cell_by_key":
            hits = [row for row in table.rows if row[0] == query["key"]]
            if len(hits) != 1 or len(table.header) < 2:
                raise QueryResolutionError(f"query resolution: key {query['key']!r} matches {len(hits)} rows")
            return hits[0][1]
    except (KeyError, ValueError) as exc:
        raise QueryResolutionError(f"query resolution: malformed query {query!r}") from exc
    raise QueryResolutionError(f"query resolution: unknown query kind {kind!r}")


def dataset_sample(i: int, seed: int, limits: TableLimits = TableLimits()) -> tuple[RenderedDocument, QAPair]:
    """The ``i``-th sample of the dataset stream for ``seed``."""
    sample_seed = seed ^ i
    table = generate_table(sample_seed, limits)
    rng = np.random.default_rng([seed, i])
    candidates = applicable_templates(table)
    template_id = candidates[int(rng.integers(len(candidates)))]
    style = PRESETS[int(rng.integers(len(PRESETS)))]
    qa = instantiate_qa(table, template_id, int(rng.integers(2**63)))
    doc = render_table_image(table, style, sample_seed)
    return doc, qa


def generate_dataset(
    n: int, seed: int, limits: TableLimits = TableLimits(), threads: int = 1
) -> Iterator[tuple[RenderedDocument, QAPair]]:
    """Deterministic stream of rendered tables with one QA pair each.

    With ``threads > 1`` samples are produced by a worker pool and yielded in
    index order, so output is identical to the sequential stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if threads <= 1:
        for i in range(n):
            yield dataset_sample(i, seed, limits)
        return
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(lambda i: dataset_sample(i, seed, limits), range(n))
