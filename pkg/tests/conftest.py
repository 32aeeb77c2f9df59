"""Shared fixtures and hypothesis settings."""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "suite",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

from reftrack.harness.config import RunConfig, desk_profile  # noqa: E402
from reftrack.model import TrackingModel, Vocabulary  # noqa: E402


def tiny_config(**overrides) -> RunConfig:
    """A config small enough for per-test model construction."""
    cfg = desk_profile()
    model = replace(
        cfg.model,
        dim=16,
        heads=2,
        ffn_dim=16,
        backbone_channels=(4, 6, 8),
        encoder_layers=1,
        decoder_layers=1,
        detect_queries=4,
        text_dim=8,
    )
    temporal = replace(cfg.temporal, memory_frames=3, memory_slots=6,
                       temporal_layers=1, object_layers=1)
    train = replace(cfg.train, clip_length=3, lr=1e-3, lr_drop_step=10**9)
    cfg = replace(cfg, model=model, temporal=temporal, train=train)
    for key, value in overrides.items():
        cfg = replace(cfg, **{key: value})
    return cfg


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    return Vocabulary.from_texts(["red cars moving left", "black persons right"])


@pytest.fixture
def tiny_model(tiny_vocab) -> TrackingModel:
    torch.manual_seed(0)
    cfg = tiny_config()
    return TrackingModel(cfg.model, cfg.temporal, vocab_size=len(tiny_vocab))


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return tiny_config()
