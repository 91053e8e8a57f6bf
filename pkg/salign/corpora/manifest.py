"""
Corpus source for manifests on disk.

This module implements the ManifestCorpus class, which reads an external dataset
described by a tab-separated manifest, binary frame files and a vocabulary file.
"""

from pathlib import Path
from typing import List, Optional, Union

from .base_corpus import BaseCorpus
from ..synthdata import Triple, Vocabulary, load_manifest


class ManifestCorpus(BaseCorpus):
    """Source of triples listed in a manifest."""

    def __init__(self, path: Union[str, Path], vocab: Optional[Vocabulary] = None):
        super().__init__("Manifest")
        self.path = Path(path)
        self.vocab = vocab

    def load(self) -> List[Triple]:
        self.clear()
        self.logger.info(f"Reading manifest {self.path}")
        self.triples = load_manifest(self.path, self.vocab)
        return self.triples
