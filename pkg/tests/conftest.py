# -*- coding: utf-8 -*-
"""
Shared fixtures: seeded tiny datasets, a tiny run config, window builders
"""

from dataclasses import replace

import numpy as np
import pytest

from telezoom.config import DataConfig, KalConfig, ModelConfig, RunConfig, TrainConfig
from telezoom.datagen import TrafficConfig, build_dataset
from telezoom.series import CoarsenerSpec, Domain, FineSeries, make_windows

TINY_TRAFFIC = (
    TrafficConfig(name="tiny-a", duration_ms=1500, background_load=0.3, burst_rate=12.0,
                  burst_duration_ms=(5, 20), burst_gap_ms=(40, 120)),
    TrafficConfig(name="tiny-b", duration_ms=1500, background_load=0.2, burst_rate=16.0,
                  burst_duration_ms=(3, 12), burst_gap_ms=(60, 150)),
)
TINY_HELD_OUT = (
    TrafficConfig(name="tiny-unseen", duration_ms=1500, background_load=0.25, burst_rate=14.0,
                  burst_duration_ms=(8, 25), burst_gap_ms=(50, 140)),
)


def queue_window(qlen, sent, zoom, *, offset=0, example_id=0, scalars=None):
    """One queue-case window (max/periodic qlen, summed sent) built from fine arrays"""
    qlen = np.asarray(qlen, dtype=np.float64)
    sent = np.asarray(sent, dtype=np.float64)
    channels = {
        "qlen": FineSeries("qlen", qlen, 1.0, Domain.NONNEG_INT),
        "sent": FineSeries("sent", sent, 1.0, Domain.NONNEG_INT),
    }
    specs = [
        ("qlen", CoarsenerSpec("max", zoom)),
        ("qlen", CoarsenerSpec("periodic", zoom, offset)),
        ("sent", CoarsenerSpec("sum", zoom)),
    ]
    (ex,) = make_windows(channels, specs, "qlen", len(qlen) // zoom, len(qlen),
                         scalar_fn=lambda _: dict(scalars or {}))
    return replace(ex, example_id=example_id)


@pytest.fixture(scope="session")
def tiny_splits():
    return build_dataset(TINY_TRAFFIC, zoom=10, context_len=3, traces_per_config=3,
                         held_out=TINY_HELD_OUT, seed=7, workers=1)


@pytest.fixture(scope="session")
def tiny_link_splits():
    return build_dataset(TINY_TRAFFIC, zoom=10, context_len=3, case="link", traces_per_config=3,
                         seed=7, workers=1)


@pytest.fixture
def tiny_cfg():
    return RunConfig(
        seed=7,
        data=DataConfig(zoom=10, context_len=3, traces_per_config=3),
        model=ModelConfig(layers=1, width=16, heads=2, ff_width=32, dropout=0.0, seed=0),
        train=TrainConfig(epochs=2, batch_size=32, lr=1e-3, patience=2),
        kal=KalConfig(max_outer=2),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
