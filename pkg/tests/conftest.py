from __future__ import annotations

from pathlib import Path

import pytest

from ecpt.runner import SqlRunner
from ecpt.spider import database_paths, load_items, load_schemas

from fixtures import build_spider_fixture


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory) -> Path:
    return build_spider_fixture(tmp_path_factory.mktemp("spider"))


@pytest.fixture(scope="session")
def schemas(dataset_root):
    return load_schemas(dataset_root / "tables.json")


@pytest.fixture(scope="session")
def items(dataset_root, schemas):
    return load_items(dataset_root / "dev.json", schemas)


@pytest.fixture(scope="session")
def runner(dataset_root, schemas) -> SqlRunner:
    return SqlRunner(database_paths(dataset_root, schemas))
