import logging

import pytest

logging.basicConfig(level=logging.INFO)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow benchmark reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keep reference-pool caches out of the working tree."""
    from mlio import store

    monkeypatch.setattr(store, "_pool_store", store.ReferencePoolStore(tmp_path / "pool_cache"))
