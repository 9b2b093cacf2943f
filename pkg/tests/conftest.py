import numpy as np
import pytest

from cohkge.kg_data import Vocab, build_dataset

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _criteria.setdefault(num, {"title": title, "outcomes": []})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        entry = _criteria[num]
        outs = entry["outcomes"]
        if any(o == "failed" for o in outs):
            verdict = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {num}: {verdict}  {entry['title']}")


def make_dataset(train, valid=(), test=(), n_entities=None, n_relations=None):
    """Dataset over integer-named entities ``0..n-1`` and relations ``0..m-1``."""
    triples = list(train) + list(valid) + list(test)
    n = n_entities if n_entities is not None else 1 + max(max(s, o) for s, _, o in triples)
    m = n_relations if n_relations is not None else 1 + max(r for _, r, _ in triples)
    ents = Vocab([f"e{i}" for i in range(n)])
    rels = Vocab([f"r{i}" for i in range(m)], kind="relation")
    return build_dataset(list(train), list(valid), list(test), ents, rels)


def random_dataset(rng, n_entities, n_relations, n_triples, valid_frac=0.15, test_frac=0.15):
    seen = set()
    while len(seen) < n_triples:
        s, o = rng.integers(0, n_entities, 2)
        if s != o:
            seen.add((int(s), int(rng.integers(0, n_relations)), int(o)))
    triples = sorted(seen)
    order = rng.permutation(len(triples))
    triples = [triples[i] for i in order]
    nv, nt = int(valid_frac * n_triples), int(test_frac * n_triples)
    return make_dataset(triples[nv + nt:], triples[:nv], triples[nv:nv + nt],
                        n_entities, n_relations)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_differences(fn, model, h=1e-5):
    """Central finite differences of ``fn(model)`` for every parameter entry."""
    grads = []
    for arr in model.arrays():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = fn(model)
            arr[idx] = orig - h
            down = fn(model)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_errors(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
