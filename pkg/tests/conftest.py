from __future__ import annotations

import numpy as np
import pytest

from lwids import flows, gbt, synth
from lwids.gbt import LEAF, GbtConfig, GbtModel, Tree

_ACCEPTANCE: list[tuple[str, str, str]] = []


def random_tree(rng: np.random.Generator, n_features: int, max_depth: int) -> Tree:
    """Random tree with additive positive covers and random leaf values."""
    feature, threshold, left, right, value, cover, gain = [], [], [], [], [], [], []

    def new_node():
        for arr in (feature, threshold, left, right, value, cover, gain):
            arr.append(0)
        return len(feature) - 1

    def build(k, depth):
        if depth == max_depth or (depth > 0 and rng.random() < 0.3):
            feature[k] = LEAF
            left[k] = right[k] = -1
            value[k] = float(rng.normal())
            cover[k] = float(rng.integers(1, 20))
            return cover[k]
        feature[k] = int(rng.integers(n_features))
        threshold[k] = round(float(rng.normal()), 1)
        gain[k] = float(rng.random())
        lc = new_node()
        rc = new_node()
        left[k], right[k] = lc, rc
        cover[k] = build(lc, depth + 1) + build(rc, depth + 1)
        return cover[k]

    build(new_node(), 0)
    return Tree(np.array(feature, np.int64), np.array(threshold, float), np.array(left, np.int64),
                np.array(right, np.int64), np.array(value, float), np.array(cover, float), np.array(gain, float))


def random_model(rng: np.random.Generator, n_features: int | None = None, max_depth: int | None = None,
                 max_trees: int = 4) -> GbtModel:
    d = n_features or int(rng.integers(1, 6))
    depth = max_depth or int(rng.integers(1, 4))
    trees = tuple(random_tree(rng, d, depth) for _ in range(int(rng.integers(1, max_trees + 1))))
    return GbtModel(trees, float(rng.normal()), GbtConfig(), tuple(f"f{j}" for j in range(d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_split():
    spec = synth.planted_spec(n_features=12, n_planted=3, shift=6.0, n_normal=800, n_positive=60, seed=3,
                              scvic_names=False)
    return spec, flows.split(synth.generate(spec), seed=3)


@pytest.fixture(scope="session")
def small_model(small_split):
    _, split = small_split
    return gbt.fit(split.train, GbtConfig(num_rounds=20))


# -- acceptance summary -------------------------------------------------------

@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if not item.module.__name__.endswith("test_acceptance"):
        return
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE.append((title, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for title, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {title}" + (f"  ({detail})" if detail else ""))
