import sys

import numpy as np
import pytest

from pixeldoc.raster import PRESETS, StylePreset
from pixeldoc.tables import TableSpec


@pytest.fixture
def classic() -> StylePreset:
    return PRESETS[0]


@pytest.fixture
def fruit_table() -> TableSpec:
    return TableSpec(("Fruit", "Price"), (("Mangoes", "3"), ("Apples", "2")))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
