"""
Abstract base class for all corpus sources.

This module defines the BaseCorpus class, which serves as a template for the
specific sources (generated corpora, manifests on disk). It enforces a common
interface for loading triples, caching and splitting, so the trainer and the
command-line surface treat every source the same way.
"""

from abc import ABC, abstractmethod
from typing import List, Dict, Any, Optional, Tuple
import logging

from ..synthdata import Triple
from ..errors import ConfigurationError


class BaseCorpus(ABC):
    """
    Abstract base class for all corpus sources.

    This class provides shared functionality for all sources, including result
    management, caching and train/valid/test splitting. Subclasses must
    implement the `load` method.
    """

    def __init__(self, name: str, cache_manager=None):
        """
        Initialize the base corpus.

        Args:
            name: The display name of the source (e.g., "Synthetic").
            cache_manager: An optional CacheManager instance for caching corpora.
        """
        self.name = name
        self.triples: List[Triple] = []
        self.cache_manager = cache_manager
        self.logger = logging.getLogger(self.name)

    @abstractmethod
    def load(self) -> List[Triple]:
        """
        Loads the corpus, stores it in self.triples and returns it.

        This method must be implemented by all subclasses.
        """
        pass

    def clear(self) -> None:
        """Clears the stored triples."""
        self.triples = []

    def split(self, n_valid: int, n_test: int) -> Tuple[List[Triple], List[Triple], List[Triple]]:
        """
        Partitions the loaded corpus into train, valid and test lists.

        The last `n_test` triples form the test set, the `n_valid` before them the
        validation set, and the rest the training set.
        """
        n_total = len(self.triples)
        if n_valid < 0 or n_test < 0 or n_valid + n_test >= n_total:
            raise ConfigurationError(
                f"Cannot split {n_total} triples into {n_valid} valid and {n_test} test examples with a non-empty train set")
        n_train = n_total - n_valid - n_test
        return (self.triples[:n_train],
                self.triples[n_train:n_train + n_valid],
                self.triples[n_train + n_valid:])

    def _get_from_cache(self, params: Dict[str, Any]) -> Optional[List[Triple]]:
        """Try to get the corpus from the cache manager before building it."""
        if self.cache_manager:
            return self.cache_manager.get(self.name, params)
        return None

    def _save_to_cache(self, params: Dict[str, Any]) -> None:
        """Save the loaded corpus to the cache manager."""
        if self.cache_manager and self.triples:
            self.cache_manager.set(self.name, params, self.triples)
