import os
from pathlib import Path

import numpy as np
import pytest

from unicodebook.adapters.storage.local import LocalStorageAdapter
from unicodebook.config import Settings
from unicodebook.corpus.dataset import CorpusBundle, prepare_corpus
from unicodebook.services.state import TrainingState

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# Mirrors configs/tiny.env so tests do not depend on the file or on the environment.
TINY = {
    "resolution": 8,
    "patch_size": 4,
    "train_images": 16,
    "heldout_images": 4,
    "text_samples": 16,
    "heldout_text_samples": 4,
    "codebook_size": 16,
    "depth": 2,
    "usage_window": 4,
    "encoder_hidden": 16,
    "lm_width": 16,
    "lm_layers": 1,
    "lm_heads": 2,
    "lm_context": 160,
    "lm_mlp_ratio": 2,
    "tokenizer_batch": 4,
    "lm_batch": 4,
    "stage1_rounds": 2,
    "tokenizer_steps_per_round": 3,
    "lm_steps_per_round": 3,
    "sync_interval": 2,
    "stage2_steps": 4,
}


def tiny_settings(**overrides) -> Settings:
    return Settings(**{**TINY, **overrides})


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch):
    """Keep UNICODEBOOK_* variables from the caller's shell out of every test."""
    for key in list(os.environ):
        if key.startswith("UNICODEBOOK_"):
            monkeypatch.delenv(key)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def settings() -> Settings:
    return tiny_settings()


@pytest.fixture
def bundle(settings: Settings) -> CorpusBundle:
    return prepare_corpus(settings)


@pytest.fixture
def state(settings: Settings) -> TrainingState:
    return TrainingState.initialize(settings)


@pytest.fixture
def storage(tmp_path: Path) -> LocalStorageAdapter:
    return LocalStorageAdapter(tmp_path / "store")


@pytest.fixture
def make_settings():
    """Factory for tiny settings with per-test overrides."""
    return tiny_settings
