from __future__ import annotations

import math

import numpy as np
import pytest

from interest_retrieval.embedding import EmbedderConfig, make_embedder, tokenize


@pytest.fixture
def abc_embedder():
    return make_embedder(EmbedderConfig.for_vocabulary(["apple", "banana", "cherry"]))


def naive_embed(text: str, vocabulary: list[str]) -> list[float]:
    """Reference vocab embedding built from plain Python lists."""
    counts = [0.0] * len(vocabulary)
    position = {t: i for i, t in enumerate(vocabulary)}
    for tok in tokenize(text):
        if tok in position:
            counts[position[tok]] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    return [c / norm for c in counts] if norm else counts


def naive_cosine(a, b) -> float:
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (math.sqrt(na) * math.sqrt(nb))


def random_titles(rng: np.random.Generator, vocabulary: list[str], count: int, max_len: int = 6) -> list[str]:
    return [
        " ".join(vocabulary[i] for i in rng.integers(len(vocabulary), size=int(rng.integers(1, max_len + 1))))
        for _ in range(count)
    ]


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(item.user_properties).get("detail", "")
        item.config.stash[_ACCEPTANCE].append((marker.args[0], report.passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash[_ACCEPTANCE]
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in rows:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))
