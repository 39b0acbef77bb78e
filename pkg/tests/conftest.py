import time
from types import SimpleNamespace

import numpy as np
import pytest

from tabguard import kernels

BACKENDS = ["python"] + (["cython"] if kernels.compiled_backend is not None else [])
KERNEL_NAMES = ("portfolio_losses", "auc_counts", "ks_gap", "bin_stats", "wasserstein_sorted")


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.python_backend if request.param == "python" else kernels.compiled_backend
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench():
    """Seeded synthetic benchmark with a trained baseline, shared across test modules."""
    from tabguard import pipeline
    from tabguard.attacks import DomainProjector

    start = time.perf_counter()
    cfg = pipeline.RunConfig()
    raw, schema = pipeline.synthetic_benchmark(cfg)
    prep = pipeline.prepare(raw, schema, cfg.ratios, cfg.seeds()["split"])
    ckpt = pipeline.train_model(prep, cfg, "baseline")
    projector = DomainProjector.from_schema(schema, prep.pre)
    return SimpleNamespace(
        cfg=cfg,
        raw=raw,
        schema=schema,
        prep=prep,
        ckpt=ckpt,
        model=ckpt.params,
        projector=projector,
        seconds=time.perf_counter() - start,
    )


@pytest.fixture(scope="session")
def defense_run(bench):
    """Baseline and both defenses trained on seeds 41, 42 and 43."""
    from tabguard import pipeline

    start = time.perf_counter()
    rows = pipeline.defend_compare(bench.raw, bench.schema, bench.cfg, [41, 42, 43])
    return SimpleNamespace(rows=rows, seconds=time.perf_counter() - start)


CRITERIA = {}
CRITERION_NOTES = {}


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line of the current criterion."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            CRITERION_NOTES.setdefault(marker.args[0], []).append(text)

    return add


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    _, ok = CRITERIA.get(number, (title, True))
    CRITERIA[number] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
        for text in CRITERION_NOTES.get(number, []):
            terminalreporter.write_line(f"              {text}")
