from __future__ import annotations

import json
from pathlib import Path

import pytest

from tablex.model import SourceText, Table, normalize_rectangular, parse_html_table

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def listing_json() -> str:
    return (FIXTURES / "listing3.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def balance_sheet_source() -> SourceText:
    return SourceText((FIXTURES / "balance_sheet_input.txt").read_bytes().decode("utf-8"))


@pytest.fixture(scope="session")
def balance_sheet_gold_html() -> str:
    return (FIXTURES / "balance_sheet_gold.html").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def balance_sheet_gold(balance_sheet_gold_html) -> Table:
    return normalize_rectangular(parse_html_table(balance_sheet_gold_html))


@pytest.fixture(scope="session")
def go_source() -> SourceText:
    return SourceText((FIXTURES / "go_input.txt").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def corrupted_corpus() -> list[dict]:
    return json.loads((FIXTURES / "corrupted_corpus.json").read_text(encoding="utf-8"))["fixtures"]
