from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from dehazeguard import HazeDataset, gen_dataset, init_params, train, write_dataset
from dehazeguard.model import TrainConfig

if TYPE_CHECKING:
    from pathlib import Path

    from pytest import FixtureRequest

    from dehazeguard.model import ModelParams


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the desk-scale acceptance tests (minutes of CPU)",
    )


def pytest_collection_modifyitems(
    config: pytest.Config, items: list[pytest.Item]
) -> None:
    """Skip `slow` tests at collection time, before any fixture is built.

    The autouse fixture below runs too late for tests whose module-scoped
    fixtures (e.g. training on 512 pairs) are instantiated first.
    """
    if config.getoption("--run-slow"):
        return
    marker = pytest.mark.skip(reason="slow acceptance test; pass --run-slow to run it")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(marker)


@pytest.fixture(autouse=True)
def skip_slow(request: FixtureRequest) -> None:
    """Skip tests marked `slow` unless --run-slow was given."""
    if "slow" in request.node.keywords and not request.config.getoption("--run-slow"):
        pytest.skip("slow acceptance test; pass --run-slow to run it")


@pytest.fixture(scope="session")
def tiny_dataset() -> HazeDataset:
    """Six 16x16 pairs, enough for every code path."""
    return gen_dataset(6, 16, seed=3).dataset


@pytest.fixture(scope="session")
def params() -> ModelParams:
    return init_params(0)


@pytest.fixture(scope="session")
def trained_params(tiny_dataset: HazeDataset) -> ModelParams:
    cfg = TrainConfig(epochs=3, batch_size=2, lr=0.05, seed=0)
    return train(init_params(0), tiny_dataset, cfg).params


@pytest.fixture
def dataset_file(tmp_path: Path, tiny_dataset: HazeDataset) -> Path:
    return write_dataset(tmp_path / "data" / "pairs.hzds", tiny_dataset)
