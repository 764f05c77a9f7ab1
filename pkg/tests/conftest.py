"""Shared fixtures for the metapat tests."""
from __future__ import annotations

import numpy as np
import pytest

from metapat.io_transform import ZMatrix
from metapat.mcmc import McmcConfig


@pytest.fixture
def write_tsv(tmp_path):
    """Return a helper writing text to a file under tmp_path."""

    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def small_z() -> ZMatrix:
    """30 genes x 3 studies: 6 strongly up, 4 strongly down, 20 null."""
    rng = np.random.default_rng(11)
    values = rng.standard_normal((30, 3))
    values[:6] += 5.0
    values[6:10] -= 5.0
    genes = tuple(f"g{g + 1:02d}" for g in range(30))
    return ZMatrix(values, genes, ("s1", "s2", "s3"))


@pytest.fixture
def fast_mcmc() -> McmcConfig:
    """A short chain."""
    return McmcConfig(n_iter=60, burn_in=10, seed=5)
