import pytest

from erofinder.cache import ensure_families, ensure_manifolds
from erofinder.config import RunConfig


@pytest.fixture(scope="session")
def run_config(tmp_path_factory):
    return RunConfig(cache_dir=str(tmp_path_factory.mktemp("cache")))


@pytest.fixture(scope="session")
def families(run_config):
    fams, _ = ensure_families(run_config)
    return fams


@pytest.fixture(scope="session")
def manifold_sets(run_config, families):
    sets, _ = ensure_manifolds(run_config, families)
    return sets


@pytest.fixture(scope="session")
def reference():
    from erofinder.neo import reference_catalog
    return reference_catalog()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
