"""
Ablation runner for the S-Align Lab.

This module contains the AblationRunner class, which coordinates training and
evaluation of several named variants of one base experiment. Every variant is
a set of dotted overrides on the base config; all variants share the data seed
and, per repetition, the training seed, so their rows differ only by the
objective under study.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from .corpora import load_splits
from .diagnostics import diagnose_model
from .errors import ConfigurationError
from .evalkit import evaluate_model
from .experiment import ExperimentConfig
from .exporter import Exporter
from .network import SAlignModel, load_checkpoint
from .synthdata import Triple
from .trainer import Trainer

# Overrides applied on top of the base config. `single_mt` and `single_asr`
# are handled specially in `_train_variant` for their training phases.
VARIANTS: Dict[str, Dict[str, Any]] = {
    's_align': {},
    'no_enhanced': {'continuity.enabled': False},
    'no_adversarial': {'train.adv_weight': 0.0},
    's_align_low_halign': {'objectives.contrastive_weight': 1.0, 'objectives.contrastive_level': 'low'},
    's_align_high_halign': {'objectives.contrastive_weight': 1.0, 'objectives.contrastive_level': 'high'},
    'halign': {'train.adv_weight': 0.0, 'objectives.contrastive_weight': 1.0,
               'objectives.contrastive_level': 'high'},
    'single_mt': {},
    'single_asr': {'objectives.w_mt': 0.0, 'objectives.w_st': 0.0, 'train.adv_weight': 0.0,
                   'train.pretrain_steps': 0},
}

RESULT_COLUMNS = ['variant', 'seed', 'data_seed', 'st_bleu', 'mt_bleu', 'asr_wer', 'disc_acc', 'fingerprint']


def variant_config(base: ExperimentConfig, variant: str, seed: Optional[int] = None) -> ExperimentConfig:
    """The base config with a variant's overrides and an optional training seed."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"Unknown ablation variant '{variant}'. Options: {sorted(VARIANTS)}")
    cfg = base.with_overrides(VARIANTS[variant])
    if variant == 'single_asr':
        cfg.train.asr_step_cap = cfg.train.max_steps
    if seed is not None:
        cfg.train.seed = int(seed)
    return cfg


class AblationRunner:
    """
    Trains, evaluates and diagnoses a grid of variants.

    MT pre-training is shared: it runs once per training seed and every
    variant that starts from a pre-trained model is initialized from it.
    """

    def __init__(self, base: ExperimentConfig, output_dir: Optional[Path] = None, cache_manager=None,
                 dtype: torch.dtype = torch.float32):
        self.base = base
        self.output_dir = Path(output_dir) if output_dir else None
        self.cache_manager = cache_manager
        self.dtype = dtype
        self.logger = logging.getLogger("AblationRunner")
        self.exporter = Exporter(self.output_dir)
        self._pretrained: Dict[int, Dict] = {}

        self.last_successful: List[str] = []
        self.last_failed: List[str] = []

    def _variant_dir(self, variant: str, seed: int) -> Optional[Path]:
        return self.output_dir / f"{variant}_seed{seed}" if self.output_dir else None

    def _pretrained_checkpoint(self, seed: int, train: Sequence[Triple]) -> Dict:
        if seed not in self._pretrained:
            cfg = self.base.copy()
            cfg.train.seed = seed
            out = self.output_dir / f"pretrain_seed{seed}" if self.output_dir else None
            result = Trainer(cfg, dtype=self.dtype, out_dir=out).pretrain_mt(train)
            self._pretrained[seed] = result.checkpoint
        return self._pretrained[seed]

    def _train_variant(self, variant: str, cfg: ExperimentConfig,
                       splits: Tuple[List[Triple], List[Triple], List[Triple]]) -> SAlignModel:
        train, valid, _ = splits
        out = self._variant_dir(variant, cfg.train.seed)
        if variant == 'single_asr':
            return Trainer(cfg, dtype=self.dtype, out_dir=out).finetune(train, valid_dataset=valid).model
        init = self._pretrained_checkpoint(cfg.train.seed, train)
        if variant == 'single_mt':
            model = SAlignModel(cfg.model).to(self.dtype)
            load_checkpoint(model, init)
            return model
        trainer = Trainer(cfg, dtype=self.dtype, out_dir=out)
        return trainer.finetune(train, valid_dataset=valid, init_checkpoint=init).model

    def run_variant(self, variant: str, seed: int,
                    splits: Tuple[List[Triple], List[Triple], List[Triple]]) -> Dict[str, Any]:
        """Trains one variant and returns its result row."""
        cfg = variant_config(self.base, variant, seed)
        model = self._train_variant(variant, cfg, splits)
        train, _, test = splits
        reports = evaluate_model(model, test, beam=cfg.eval.beam, max_len=cfg.eval.max_len,
                                 length_penalty=cfg.eval.length_penalty, max_frames=cfg.train.max_frames,
                                 dtype=self.dtype)
        modality, _ = diagnose_model(model, train, test, cfg, dtype=self.dtype)
        return {
            'variant': variant,
            'seed': cfg.train.seed,
            'data_seed': cfg.data.seed,
            'st_bleu': reports['st'].value,
            'mt_bleu': reports['mt'].value,
            'asr_wer': reports['asr'].value,
            'disc_acc': modality.discriminator_accuracy,
            'fingerprint': cfg.fingerprint(),
        }

    def run(self, variants: Optional[Sequence[str]] = None, seeds: Optional[Sequence[int]] = None,
            splits: Optional[Tuple[List[Triple], List[Triple], List[Triple]]] = None) -> List[Dict[str, Any]]:
        """
        Runs every variant under every seed and writes the result table.

        A variant that fails is logged and skipped; the others still run.

        Returns:
            One result row per successful (variant, seed).
        """
        variants = list(variants or self.base.ablate.variants)
        seeds = list(seeds or self.base.ablate.seeds)
        for variant in variants:
            if variant not in VARIANTS:
                raise ConfigurationError(f"Unknown ablation variant '{variant}'. Options: {sorted(VARIANTS)}")
        if splits is None:
            splits = load_splits(self.base, self.cache_manager)

        self.last_successful, self.last_failed = [], []
        rows = []
        self.logger.info(f"--- Ablation over {len(variants)} variants x {len(seeds)} seeds "
                         f"(data seed {self.base.data.seed}) ---")
        jobs = [(v, s) for s in seeds for v in variants]
        pbar = tqdm(jobs, desc="Ablation", unit="variant", file=sys.stdout, disable=None)
        for variant, seed in pbar:
            pbar.set_postfix_str(f"Current: {variant} (seed {seed})")
            try:
                rows.append(self.run_variant(variant, seed, splits))
                self.last_successful.append(f"{variant}/seed{seed}")
                self.logger.info(f"Finished {variant} (seed {seed}): {rows[-1]}")
            except Exception as e:
                self.logger.error(f"Variant '{variant}' (seed {seed}) failed: {e}", exc_info=True)
                self.last_failed.append(f"{variant}/seed{seed}")
        pbar.close()

        if self.output_dir:
            self.exporter.export(rows, 'ablation_results', format='csv', columns=RESULT_COLUMNS)
            self.exporter.export(rows, 'ablation_results', format='json')
        self.logger.info(f"--- Ablation complete: {len(self.last_successful)} succeeded, "
                         f"{len(self.last_failed)} failed ---")
        return rows

    def get_last_run_summary(self) -> Dict[str, List[str]]:
        return {'successful': self.last_successful, 'failed': self.last_failed}
