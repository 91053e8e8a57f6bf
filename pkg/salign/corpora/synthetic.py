"""
Corpus source for generated triples.

This module implements the SyntheticCorpus class, which wraps `generate_corpus`
and consults the cache before generating.
"""

from typing import List

from .base_corpus import BaseCorpus
from ..synthdata import SynthSpec, Triple, generate_corpus


class SyntheticCorpus(BaseCorpus):
    """Source of seeded synthetic triples."""

    def __init__(self, spec: SynthSpec, n: int, cache_manager=None):
        """
        Initializes the SyntheticCorpus.

        Args:
            spec: The synthesis parameters.
            n: The number of triples to generate.
            cache_manager: An optional CacheManager instance.
        """
        super().__init__("Synthetic", cache_manager)
        self.spec = spec
        self.n = n

    def load(self) -> List[Triple]:
        params = {'spec': self.spec.to_dict(), 'n': self.n}
        cached = self._get_from_cache(params)
        if cached:
            self.triples = cached
            return self.triples

        self.clear()
        self.logger.info(f"Generating {self.n} triples (seed={self.spec.seed}, vocab={self.spec.vocab_size})")
        self.triples = generate_corpus(self.spec, self.n)
        self._save_to_cache(params)
        return self.triples
