"""
Corpus sources and the split loader used by every command.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

from .base_corpus import BaseCorpus
from .manifest import ManifestCorpus
from .synthetic import SyntheticCorpus
from ..errors import ConfigurationError
from ..synthdata import SynthSpec, TranslationRule, Triple

logger = logging.getLogger(__name__)

SPLITS = ('train', 'valid', 'test')


def synth_spec(data_cfg) -> SynthSpec:
    """Builds the SynthSpec described by a resolved `data` config section."""
    rule = TranslationRule(permute=True, offset=data_cfg.translation_offset)
    if data_cfg.translation == 'identity':
        rule = TranslationRule.identity()
    spec = SynthSpec(vocab_size=data_cfg.vocab_size, min_len=data_cfg.min_len, max_len=data_cfg.max_len,
                     frames_per_token=tuple(data_cfg.frames_per_token),
                     blank_insert_rate=data_cfg.blank_insert_rate, noise_std=data_cfg.noise_std,
                     d_feat=data_cfg.d_feat, prototype_scale=data_cfg.prototype_scale,
                     translation_rule=rule, seed=data_cfg.seed)
    spec.validate()
    return spec


def load_splits(cfg, cache_manager=None) -> Tuple[List[Triple], List[Triple], List[Triple]]:
    """
    Returns (train, valid, test) for an experiment.

    With `data.manifest_dir` set, the three splits are read from
    `{train,valid,test}.tsv` there; otherwise one synthetic corpus of
    n_train + n_valid + n_test triples is generated (or read from the cache)
    and split in order.
    """
    data = cfg.data
    if data.manifest_dir:
        root = Path(data.manifest_dir)
        splits = []
        for name in SPLITS:
            corpus = ManifestCorpus(root / f"{name}.tsv")
            splits.append(corpus.load())
        if not splits[0]:
            raise ConfigurationError(f"Training manifest in {root} is empty")
        return splits[0], splits[1], splits[2]

    corpus = SyntheticCorpus(synth_spec(data), data.n_train + data.n_valid + data.n_test, cache_manager)
    corpus.load()
    return corpus.split(data.n_valid, data.n_test)


__all__ = ['BaseCorpus', 'ManifestCorpus', 'SyntheticCorpus', 'SPLITS', 'load_splits', 'synth_spec']
