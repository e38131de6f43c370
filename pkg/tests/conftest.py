"""Prepare py.test."""

import numpy as np
import pytest
from click.testing import CliRunner

from cascadekit.cascades import RPCParams
from cascadekit.const import OUTPUT_DIR_ENV
from tests import known_measure


@pytest.fixture(autouse=True)
def cache_dir(monkeypatch, tmp_path):
    monkeypatch.setattr(
        "cascadekit.util.user_cache_path", lambda *args, **kwargs: tmp_path / "cache"
    )
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    return tmp_path / "cache"


@pytest.fixture
def runner():
    runner = CliRunner()
    with runner.isolated_filesystem():
        yield runner


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def params():
    return RPCParams((0.3, 0.7), (0.4, 0.8))


@pytest.fixture
def measure():
    return known_measure()
