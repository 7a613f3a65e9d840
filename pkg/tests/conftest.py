import numpy as np
import pytest

from mandate.graph import from_edge_lists

_ACCEPTANCE = {}


def path_graph(n=3, features=None, labels=None):
    feats = np.eye(n) if features is None else features
    labs = np.zeros(n, dtype=int) if labels is None else labels
    return from_edge_lists(feats, labs, [[(i, i + 1) for i in range(n - 1)]])


def random_graph(rng, n, p, num_relations=1, d=3, labeled=True):
    feats = rng.standard_normal((n, d))
    labels = rng.integers(0, 2, size=n) if labeled else np.full(n, -1)
    rels = []
    for _ in range(num_relations):
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < p
        rels.append(np.stack([iu[keep], ju[keep]], 1))
    return from_edge_lists(feats, labels, rels)


@pytest.fixture
def p3():
    return path_graph(3)


@pytest.fixture
def k2():
    return path_graph(2)


@pytest.fixture
def criterion():
    def record(number, title, passed, detail=""):
        _ACCEPTANCE[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  {detail}")
