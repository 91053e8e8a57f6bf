"""
Utility functions for normalization, hashing and seeding.

This module provides a collection of helper functions used across the package:
cleaning whitespace-tokenized text, canonical JSON hashing for config
fingerprints and artifact content hashes, the CTC collapse mapping, and
derivation of reproducible random streams from (seed, index) keys.
"""

import hashlib
import json
import random
from itertools import groupby
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
import torch


def normalize_string(text: str) -> str:
    """
    Collapses runs of whitespace and strips the ends of a string.

    Args:
        text: The raw string, possibly None.

    Returns:
        The normalized string, or an empty string for missing input.
    """
    if not text:
        return ''
    return ' '.join(str(text).split())


def split_tokens(text: str) -> List[str]:
    """Splits normalized text into whitespace tokens."""
    normalized = normalize_string(text)
    return normalized.split(' ') if normalized else []


def canonical_json(obj: Any) -> str:
    """Serializes an object to JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def content_hash(obj: Any) -> str:
    """
    Returns the SHA-256 hex digest of an object.

    Bytes are hashed as-is, paths by their file contents, and everything else
    through its canonical JSON form.
    """
    if isinstance(obj, bytes):
        payload = obj
    elif isinstance(obj, Path):
        payload = obj.read_bytes()
    else:
        payload = canonical_json(obj).encode('utf-8')
    return hashlib.sha256(payload).hexdigest()


def hash_files(paths: Iterable[Union[str, Path]]) -> str:
    """Returns one SHA-256 digest over the names and contents of several files."""
    digest = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        digest.update(path.name.encode('utf-8'))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def collapse_path(path: Sequence[int], blank: int = 0) -> List[int]:
    """
    Applies the CTC collapse mapping to an alignment path.

    Repeated labels are merged first, then blanks are removed, so
    [a, a, blank, a] collapses to [a, a].
    """
    return [label for label, _ in groupby(int(p) for p in path) if label != blank]


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Builds an independent numpy Generator for a (seed, key...) tuple.

    Streams derived from different keys never overlap, which keeps
    per-example and per-batch randomness independent of iteration order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def seed_everything(seed: int) -> None:
    """Seeds python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
