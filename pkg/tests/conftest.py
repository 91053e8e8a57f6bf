"""
Shared fixtures and helper functions for the test suite.

This file is automatically discovered by pytest and provides utilities
like mocking environment variables, temporary output directories, tiny
configs, corpora and models, which are commonly needed across test files.
"""

import copy
import importlib

import pytest
import torch

import config
from salign.experiment import ExperimentConfig, ModelConfig
from salign.network import SAlignModel
from salign.synthdata import SynthSpec, TranslationRule, generate_corpus

# Reloaded by `reload_config` after the environment changes.
CONFIG_MODULE = config


# =============================================================================
# Slow-test switch
# =============================================================================

def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the seeded directional training experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: seeded training experiment, runs only with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# Configuration and Environment Fixtures
# =============================================================================

@pytest.fixture
def reload_config():
    """
    Returns a function that reloads the config module.

    The config module reads the environment at import time, so tests that
    change environment variables reload it afterwards.
    """
    def _reload():
        return importlib.reload(CONFIG_MODULE)
    return _reload


@pytest.fixture
def mock_env_vars(monkeypatch):
    """
    Sets environment variables for a test; monkeypatch restores them afterwards.

    Usage:
    def test_something(mock_env_vars):
        mock_env_vars({"SALIGN_SEED": "7"})
    """
    def _set_env_vars(env_dict):
        for key, value in env_dict.items():
            monkeypatch.setenv(key, value)
    return _set_env_vars


@pytest.fixture
def temp_config_dirs(tmp_path, monkeypatch):
    """
    Points the cache and output directories at a temporary location so tests
    never write into the project.
    """
    temp_cache = tmp_path / "cache"
    temp_output = tmp_path / "output"
    temp_cache.mkdir()
    temp_output.mkdir()

    monkeypatch.setattr(CONFIG_MODULE, "CACHE_DIR", str(temp_cache))
    monkeypatch.setattr(CONFIG_MODULE, "DEFAULT_OUTPUT_DIR", str(temp_output))
    monkeypatch.setattr(CONFIG_MODULE, "SALIGN_SEED", "")
    yield tmp_path


# =============================================================================
# Data Fixtures
# =============================================================================

TINY_VOCAB = 12
TINY_DIM = 8


@pytest.fixture(scope="session")
def _tiny_spec():
    return SynthSpec(vocab_size=TINY_VOCAB, min_len=2, max_len=4, frames_per_token=(4, 6),
                     blank_insert_rate=0.2, noise_std=0.1, d_feat=TINY_DIM,
                     translation_rule=TranslationRule(), seed=3)


@pytest.fixture
def tiny_spec(_tiny_spec):
    return copy.deepcopy(_tiny_spec)


@pytest.fixture(scope="session")
def _tiny_corpus(_tiny_spec):
    return generate_corpus(_tiny_spec, 24)


@pytest.fixture
def tiny_corpus(_tiny_corpus):
    """24 short triples; a deep copy so tests may modify them."""
    return copy.deepcopy(_tiny_corpus)


# =============================================================================
# Model Fixtures
# =============================================================================

@pytest.fixture
def tiny_model_config():
    return ModelConfig(vocab_size=TINY_VOCAB, d_feat=TINY_DIM, d_model=TINY_DIM, n_heads=2, ffn_mult=2,
                       acoustic_layers=1, textual_layers=1, decoder_layers=1, subsample_layers=2,
                       disc_hidden=8, disc_layers=3, dropout=0.0)


@pytest.fixture
def double_model(tiny_model_config):
    """A seeded double-precision model in eval mode."""
    torch.manual_seed(0)
    return SAlignModel(tiny_model_config).double().eval()


@pytest.fixture
def tiny_experiment(temp_config_dirs):
    """A resolved experiment config sized for unit tests."""
    cfg = ExperimentConfig()
    cfg.output_dir = str(temp_config_dirs / "output")
    cfg.data.vocab_size = TINY_VOCAB
    cfg.data.d_feat = TINY_DIM
    cfg.data.min_len, cfg.data.max_len = 2, 4
    cfg.data.frames_per_token = [4, 6]
    cfg.data.seed = 3
    cfg.data.n_train, cfg.data.n_valid, cfg.data.n_test = 16, 4, 4
    cfg.model.d_model = TINY_DIM
    cfg.model.n_heads = 2
    cfg.model.ffn_mult = 2
    cfg.model.acoustic_layers = cfg.model.textual_layers = cfg.model.decoder_layers = 1
    cfg.model.disc_hidden = 8
    cfg.model.dropout = 0.0
    cfg.train.max_steps = 6
    cfg.train.pretrain_steps = 4
    cfg.train.warmup_steps = 2
    cfg.train.asr_step_cap = 4
    cfg.train.checkpoint_every = 2
    cfg.train.keep_best_k = 2
    cfg.train.max_frames = 200
    cfg.train.log_every = 1
    cfg.eval.beam = 2
    cfg.eval.max_len = 6
    cfg.diagnostics.probe_steps = 5
    return cfg.resolve()
