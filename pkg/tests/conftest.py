from __future__ import annotations

import pytest

from clozeverb.concept_kb import ingest_kb
from clozeverb.prompting import parse_template
from clozeverb.toy_oracle import ToyOracle

FORD_SENTENCE = "Ford cuts production while Chrysler's sales rise."

# AG News templates, in id order
AGNEWS_TEMPLATES = [
    "A [mask] news : X",
    "X This topic is about [mask]",
    "The category of X is [mask]",
    "Topic:[mask] X",
]

FIXTURE_TRIPLES = [
    ("ford", "company", 6), ("ford", "brand", 3), ("ford", "president", 1),
    ("chrysler", "company", 5), ("chrysler", "manufacturer", 4), ("chrysler", "automaker", 2),
    ("chrysler", "fortune 500 company", 1),
    ("business", "industry", 5), ("business", "company", 4), ("business", "sector", 3), ("business", "antique", 1),
    ("business", "businesses", 1),
    ("sports", "activity", 4), ("sports", "game", 3), ("sports", "athlete", 2),
    ("nba", "league", 5), ("nba", "organization", 3), ("nba", "basketball", 2),
]

TOY_VOCAB = [
    "business", "sports", "company", "manufacturer", "automaker", "brand", "president",
    "industry", "sector", "antique", "businesses", "activity", "game", "athlete",
    "league", "organization", "basketball", "this", "topic", "is", "about", "a", "news",
    "the", "category", "of", "ford", "chrysler", "nba", "cuts", "production", "while",
    "sales", "rise", "wins", "title", "sci", "tech", "science", "technology", "computer",
]


@pytest.fixture
def fixture_kb():
    return ingest_kb(FIXTURE_TRIPLES)


@pytest.fixture
def template2():
    return parse_template(AGNEWS_TEMPLATES[1])


@pytest.fixture
def toy():
    planted = {
        "ford": {"company": 0.8, "business": 0.1, "manufacturer": 0.1},
        "nba": {"sports": 0.5, "basketball": 0.3, "league": 0.2},
    }
    return ToyOracle(planted, vocab=TOY_VOCAB, seed=7)


_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _ACCEPTANCE.append((status, marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}")
