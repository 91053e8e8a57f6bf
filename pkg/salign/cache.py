"""
Caching module for the S-Align Lab.

This module provides the CacheManager class, which caches generated corpora to
avoid regenerating them for every run of an ablation grid. Corpora are stored
as compressed numpy archives on disk with a configurable expiry time. Cache
keys are generated from the generating parameters so that different corpora
are cached separately.
"""

import json
import hashlib
import time
from typing import List, Dict, Any, Optional
from pathlib import Path
import logging

import numpy as np

from .synthdata import Triple
from .utils import canonical_json


class CacheManager:
    """
    Manages caching of generated corpora.

    Each cache entry is identified by a unique key generated from the source name
    and its generating parameters. Cache entries have a configurable expiry time
    after which they are considered stale.
    """

    def __init__(self, cache_dir: str = "cache", expiry_hours: float = 24):
        """
        Initialize the cache manager.

        Args:
            cache_dir: The directory to store cache files.
            expiry_hours: The number of hours after which cache entries expire.
        """
        self.cache_dir = Path(cache_dir)
        self.expiry_seconds = expiry_hours * 3600
        self.logger = logging.getLogger("CacheManager")

        # Create the cache directory if it doesn't exist.
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _generate_cache_key(self, source: str, params: Dict[str, Any]) -> str:
        """
        Generate a unique cache key from the source name and its parameters.

        Parameters are serialized with sorted keys, so dict order never changes the key.

        Returns:
            An MD5 hash to be used as the cache filename.
        """
        key_string = f"{source}_{canonical_json(params)}"
        return hashlib.md5(key_string.encode()).hexdigest()

    def _get_cache_path(self, cache_key: str) -> Path:
        """Get the full path to a cache file given its key."""
        return self.cache_dir / f"{cache_key}.npz"

    def _is_cache_valid(self, cache_path: Path) -> bool:
        """Check if a cache file exists and is not expired."""
        if not cache_path.exists():
            return False
        file_age = time.time() - cache_path.stat().st_mtime
        return file_age < self.expiry_seconds

    def get(self, source: str, params: Dict[str, Any]) -> Optional[List[Triple]]:
        """
        Retrieve a cached corpus.

        Returns:
            The cached triples if found and valid, otherwise None.
        """
        cache_path = self._get_cache_path(self._generate_cache_key(source, params))

        if self._is_cache_valid(cache_path):
            try:
                with np.load(cache_path, allow_pickle=False) as archive:
                    meta = json.loads(str(archive['meta']))
                    frames = archive['frames']
                    offsets = archive['offsets']
                triples = [
                    Triple(id=row['id'], frames=frames[offsets[i]:offsets[i + 1]].copy(),
                           src_tokens=row['src'], tgt_tokens=row['tgt'])
                    for i, row in enumerate(meta)
                ]
                self.logger.info(f"Cache hit for {source} ({len(triples)} triples)")
                return triples
            except (OSError, KeyError, ValueError) as e:
                self.logger.error(f"Error reading cache file {cache_path}: {e}")

        self.logger.info(f"Cache miss for {source}")
        return None

    def set(self, source: str, params: Dict[str, Any], triples: List[Triple]) -> None:
        """Store a corpus in the cache. Empty corpora are not cached."""
        if not triples:
            self.logger.debug(f"No triples to cache for {source}")
            return

        cache_path = self._get_cache_path(self._generate_cache_key(source, params))
        offsets = np.cumsum([0] + [t.n_frames for t in triples])
        meta = [{'id': t.id, 'src': list(t.src_tokens), 'tgt': list(t.tgt_tokens)} for t in triples]
        try:
            np.savez_compressed(cache_path, frames=np.concatenate([t.frames for t in triples], axis=0),
                                offsets=offsets, meta=np.array(json.dumps(meta)))
            self.logger.info(f"Cached {len(triples)} triples for {source}")
        except OSError as e:
            self.logger.error(f"Error writing to cache file {cache_path}: {e}")

    def clear_expired(self) -> None:
        """Remove only expired cache files."""
        try:
            removed_count = 0
            for cache_file in self.cache_dir.glob("*.npz"):
                if not self._is_cache_valid(cache_file):
                    cache_file.unlink()
                    removed_count += 1

            if removed_count > 0:
                self.logger.info(f"Removed {removed_count} expired cache files")
        except Exception as e:
            self.logger.error(f"Error clearing expired cache files: {e}")
