"""Shared fixtures."""

import csv
import logging

import numpy as np
import pytest

from xattn.config import settings
from xattn.schemas import AttentionInputs


@pytest.fixture(autouse=True)
def no_log_file(monkeypatch):
    """Keep test runs from writing logs/xattn.log."""
    monkeypatch.setattr(settings, "LOG_TO_FILE", False)
    yield
    # handlers installed by cli.main point at this test's captured streams
    logging.getLogger("xattn").handlers.clear()


@pytest.fixture
def make_inputs():
    """Factory for random single-head attention inputs."""

    def _make(length=64, d_h=16, causal=True, seed=0, head=0):
        rng = np.random.default_rng(seed)
        return AttentionInputs(
            q=rng.standard_normal((length, d_h)) / np.sqrt(d_h),
            k=rng.standard_normal((length, d_h)) / np.sqrt(d_h),
            v=rng.standard_normal((length, d_h)),
            causal=causal,
            head=head,
        )

    return _make


@pytest.fixture
def read_report():
    """Read a CSV report, skipping its leading ``#`` metadata lines."""

    def _read(path):
        with open(path, newline="", encoding="utf-8") as f:
            lines = [line for line in f if not line.startswith("#")]
        return list(csv.DictReader(lines))

    return _read
