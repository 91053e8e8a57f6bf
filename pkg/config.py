"""
Central configuration file for the S-Align Lab.

This script loads settings from environment variables (defined in a .env file)
and provides them as constants for use throughout the application. It also defines
the documented hyperparameter profiles: the verbatim values reported for the
full-scale setup (`PAPER_DEFAULT`) and the desk-scale values used for synthetic
runs (`TOY`), plus a quick `SMOKE` profile for checking that MT pre-training learns.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from a .env file, if it exists.
load_dotenv()

# Get the absolute path to the project's root directory.
# This is used to resolve relative paths for cache and output directories.
PROJECT_ROOT = Path(__file__).parent.absolute()

# --- RUN SETTINGS ---

# Overrides `train.seed` of every resolved experiment config when set.
SALIGN_SEED = os.getenv("SALIGN_SEED", "")

# The profile used when neither the config file nor the CLI names one.
DEFAULT_PROFILE = "toy"

# Version string written into every artifact directory.
SALIGN_VERSION = "0.3.0"

# --- DIRECTORY SETTINGS ---

# The default directory where run artifacts (data, checkpoints, logs, reports) are written.
DEFAULT_OUTPUT_DIR = os.getenv("SALIGN_OUTPUT_DIR", os.path.join(PROJECT_ROOT, "output"))

# The directory where generated corpora are cached between runs.
CACHE_DIR = os.getenv("SALIGN_CACHE_DIR", os.path.join(PROJECT_ROOT, "cache"))

# The time-to-live for cached corpora, in hours.
CACHE_EXPIRY_HOURS = 24 * 7

# --- EXIT CODES ---

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAILURE = 3

# --- LOGGING SETTINGS ---

# The logging level for the application. Options: DEBUG, INFO, WARNING, ERROR, CRITICAL.
LOG_LEVEL = os.getenv("SALIGN_LOG_LEVEL", "INFO")

# The format for log messages.
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Set to a filename to enable logging to a file. If empty, logs only to the console.
LOG_FILE = os.getenv("LOG_FILE", "")

# --- HYPERPARAMETER PROFILES ---
# Each profile maps section -> key -> value. Keys missing from a profile take the
# dataclass defaults in salign/experiment.py, which equal the toy values.

PAPER_DEFAULT = {
    "model": {
        "d_model": 768,
        "n_heads": 12,
        "acoustic_layers": 12,
        "textual_layers": 6,
        "decoder_layers": 6,
        "disc_hidden": 512,
        "disc_layers": 3,
        "dropout": 0.1,
    },
    "objectives": {
        "w_asr": 1.0,
        "w_mt": 0.5,
        "w_st": 1.0,
        "contrastive_temperature": 0.05,
    },
    "continuity": {
        "enabled": True,
        "tau": 0.1,
    },
    "train": {
        "max_steps": 50000,
        "learning_rate": 2e-4,
        "warmup_steps": 4000,
        "adv_weight": 3.5,
        "asr_step_cap": 15000,
        "checkpoint_every": 1000,
        "keep_best_k": 5,
        "max_frames": 16_000_000,
    },
    "eval": {
        "beam": 8,
        "length_penalty": 1.0,
    },
}

TOY = {
    "data": {
        "vocab_size": 40,
        "n_train": 2000,
        "n_valid": 100,
        "n_test": 100,
    },
    "model": {
        "d_model": 64,
        "n_heads": 4,
        "acoustic_layers": 2,
        "textual_layers": 2,
        "decoder_layers": 2,
        "disc_hidden": 64,
        "disc_layers": 3,
        "dropout": 0.1,
    },
    "objectives": {
        "w_asr": 1.0,
        "w_mt": 0.5,
        "w_st": 1.0,
    },
    "continuity": {
        "enabled": True,
        "tau": 0.1,
    },
    "train": {
        "max_steps": 2000,
        "pretrain_steps": 600,
        "learning_rate": 2e-4,
        "warmup_steps": 200,
        "adv_weight": 3.5,
        "asr_step_cap": 600,
        "checkpoint_every": 200,
        "keep_best_k": 5,
    },
    "eval": {
        "beam": 8,
    },
}

# Identity translation on a small vocabulary; MT pre-training alone should cut
# the training cross-entropy by at least 80% within the 300 pre-training steps.
SMOKE = {
    "data": {
        "vocab_size": 20,
        "translation": "identity",
        "n_train": 500,
        "n_valid": 20,
        "n_test": 20,
    },
    "model": {
        "dropout": 0.0,
    },
    "train": {
        "pretrain_steps": 300,
        "max_steps": 300,
        "learning_rate": 2e-3,
        "warmup_steps": 60,
        "asr_step_cap": 300,
        "checkpoint_every": 100,
        "keep_best_k": 3,
    },
}

PROFILES = {
    "paper_default": PAPER_DEFAULT,
    "toy": TOY,
    "smoke": SMOKE,
}
