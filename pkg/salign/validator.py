"""
Configuration validation module for the S-Align Lab.

This module provides a function to validate a resolved experiment configuration
before any command runs. It separates critical errors (which stop the command
with a configuration exit code) from warnings (which allow the run to proceed
but are logged so the reader of a run log can see them).
"""

import logging
import os
from pathlib import Path
from typing import List, Tuple

from .synthdata import N_SPECIAL


def validate_config(cfg) -> Tuple[List[str], List[str]]:
    """
    Validates an ExperimentConfig against a set of requirements.

    Args:
        cfg: A resolved ExperimentConfig.

    Returns:
        A tuple containing two lists:
        - errors (List[str]): Critical issues that should stop execution.
        - warnings (List[str]): Non-critical issues worth logging.
    """
    errors = []
    warnings = []
    logger = logging.getLogger("ConfigValidator")

    # --- 1. Data ---
    data = cfg.data
    if data.vocab_size <= N_SPECIAL:
        errors.append(f"data.vocab_size must exceed the {N_SPECIAL} reserved ids (got {data.vocab_size}).")
    if data.min_len < 1 or data.max_len < data.min_len:
        errors.append(f"data length range [{data.min_len}, {data.max_len}] is invalid.")
    if len(data.frames_per_token) != 2 or data.frames_per_token[0] < 1 or data.frames_per_token[1] < data.frames_per_token[0]:
        errors.append(f"data.frames_per_token must be a range [lo, hi] with 1 <= lo <= hi (got {data.frames_per_token}).")
    if not 0.0 <= data.blank_insert_rate <= 1.0:
        errors.append(f"data.blank_insert_rate must be in [0, 1] (got {data.blank_insert_rate}).")
    if data.translation not in ('permute', 'identity'):
        errors.append(f"data.translation must be 'permute' or 'identity' (got '{data.translation}').")
    if data.n_train < 1 or data.n_valid < 1 or data.n_test < 1:
        errors.append("data.n_train, data.n_valid and data.n_test must all be positive.")

    # --- 2. Model ---
    model = cfg.model
    if model.d_model % model.n_heads != 0:
        errors.append(f"model.n_heads ({model.n_heads}) must divide model.d_model ({model.d_model}).")
    if model.disc_layers < 1 or model.disc_hidden < 1:
        errors.append("model.disc_layers and model.disc_hidden must be positive.")
    if not 0.0 <= model.dropout < 1.0:
        errors.append(f"model.dropout must be in [0, 1) (got {model.dropout}).")
    if model.d_feat is not None and model.d_feat != model.d_model and not model.input_projection:
        warnings.append(f"Feature dim {model.d_feat} differs from model dim {model.d_model}; an input projection will be used.")

    # --- 3. Objectives ---
    obj = cfg.objectives
    for name in ('w_asr', 'w_mt', 'w_st', 'contrastive_weight'):
        if getattr(obj, name) < 0:
            errors.append(f"objectives.{name} must be nonnegative (got {getattr(obj, name)}).")
    if obj.contrastive_level not in ('low', 'high'):
        errors.append(f"objectives.contrastive_level must be 'low' or 'high' (got '{obj.contrastive_level}').")
    if obj.contrastive_temperature <= 0:
        errors.append("objectives.contrastive_temperature must be positive.")

    # --- 4. Continuity ---
    cont = cfg.continuity
    if not 0.0 <= cont.tau <= 1.0:
        errors.append(f"continuity.tau must be in [0, 1] (got {cont.tau}).")
    if cont.replacement_source not in ('ctc_argmax', 'gold'):
        errors.append(f"continuity.replacement_source must be 'ctc_argmax' or 'gold' (got '{cont.replacement_source}').")
    if cont.per not in ('batch', 'example'):
        errors.append(f"continuity.per must be 'batch' or 'example' (got '{cont.per}').")

    # --- 5. Training ---
    train = cfg.train
    if train.adv_weight < 0:
        errors.append(f"train.lambda must be nonnegative (got {train.adv_weight}).")
    if train.asr_step_cap > train.max_steps:
        errors.append(f"train.asr_step_cap ({train.asr_step_cap}) cannot exceed train.max_steps ({train.max_steps}).")
    if train.keep_best_k < 1:
        errors.append("train.keep_best_k must be at least 1.")
    if train.checkpoint_every < 1 or train.max_steps < 1 or train.pretrain_steps < 0:
        errors.append("train.max_steps and train.checkpoint_every must be positive, train.pretrain_steps nonnegative.")
    if train.adversarial_schedule not in ('joint', 'alternating'):
        errors.append(f"train.adversarial_schedule must be 'joint' or 'alternating' (got '{train.adversarial_schedule}').")
    if cont.enabled and train.adv_weight == 0:
        warnings.append("Continuity is enabled but lambda is 0; mixed sequences will not affect training.")

    # --- 6. Evaluation ---
    if cfg.eval.beam < 1:
        errors.append(f"eval.beam must be at least 1 (got {cfg.eval.beam}).")
    if cfg.eval.split not in ('train', 'valid', 'test') or cfg.diagnostics.split not in ('train', 'valid', 'test'):
        errors.append("eval.split and diagnostics.split must be one of train, valid, test.")
    if cfg.diagnostics.fit_split not in ('train', 'valid', 'test'):
        errors.append(f"diagnostics.fit_split must be one of train, valid, test (got '{cfg.diagnostics.fit_split}').")
    if cfg.diagnostics.probe_steps < 1 or cfg.diagnostics.probe_lr <= 0:
        errors.append("diagnostics.probe_steps and diagnostics.probe_lr must be positive.")

    if cfg.profile == 'paper_default':
        warnings.append("The paper_default profile documents full-scale values and is not sized for a desk run.")

    # --- 7. Output directory ---
    if cfg.output_dir:
        try:
            output_path = Path(cfg.output_dir)
            output_path.mkdir(parents=True, exist_ok=True)
            if not os.access(output_path, os.W_OK):
                errors.append(f"Output directory is not writable: {output_path}")
        except Exception as e:
            errors.append(f"Could not create or access output directory '{cfg.output_dir}': {e}")

    # --- 8. Log and Return Results ---
    if warnings:
        logger.warning("--- Configuration Warnings ---")
        for warning in warnings:
            logger.warning(f"  - {warning}")

    if errors:
        logger.error("--- Configuration Errors ---")
        for error in errors:
            logger.error(f"  - {error}")

    return errors, warnings
