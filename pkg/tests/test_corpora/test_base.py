"""
Pytest-style tests for the BaseCorpus class.

This test suite verifies the shared corpus behaviour: splitting and the cache
hooks, using a minimal in-memory subclass.
"""

from unittest.mock import MagicMock

import pytest

from salign.corpora.base_corpus import BaseCorpus
from salign.errors import ConfigurationError


class MockCorpus(BaseCorpus):
    """A corpus that serves a fixed list of triples."""

    def __init__(self, triples, cache_manager=None):
        super().__init__("Mock", cache_manager)
        self._source = triples

    def load(self):
        self.triples = list(self._source)
        return self.triples


class TestBaseCorpus:
    def test_split_in_order(self, tiny_corpus):
        """The last n_test triples are test, the n_valid before them valid."""
        corpus = MockCorpus(tiny_corpus)
        corpus.load()
        train, valid, test = corpus.split(4, 4)
        assert (len(train), len(valid), len(test)) == (16, 4, 4)
        assert train + valid + test == tiny_corpus
        assert test == tiny_corpus[-4:]

    def test_split_requires_train_examples(self, tiny_corpus):
        """A split that leaves no training data is rejected."""
        corpus = MockCorpus(tiny_corpus[:4])
        corpus.load()
        with pytest.raises(ConfigurationError):
            corpus.split(2, 2)

    def test_clear_empties_triples(self, tiny_corpus):
        """The last load is kept on the corpus and clear empties it."""
        corpus = MockCorpus(tiny_corpus[:3])
        corpus.load()
        assert corpus.triples == tiny_corpus[:3]
        corpus.clear()
        assert corpus.triples == []

    def test_cache_hooks_use_source_name(self, tiny_corpus):
        """Cache lookups and writes are keyed by the corpus name."""
        cache = MagicMock()
        cache.get.return_value = None
        corpus = MockCorpus(tiny_corpus[:2], cache_manager=cache)
        assert corpus._get_from_cache({'n': 2}) is None
        cache.get.assert_called_once_with("Mock", {'n': 2})
        corpus.load()
        corpus._save_to_cache({'n': 2})
        cache.set.assert_called_once_with("Mock", {'n': 2}, tiny_corpus[:2])

    def test_no_cache_manager(self, tiny_corpus):
        """Without a cache manager the hooks do nothing."""
        corpus = MockCorpus(tiny_corpus[:2])
        assert corpus._get_from_cache({}) is None
        corpus.load()
        corpus._save_to_cache({})
