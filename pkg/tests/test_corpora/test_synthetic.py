"""
Pytest-style tests for the SyntheticCorpus source and the split loader.
"""

from unittest.mock import MagicMock

from salign.cache import CacheManager
from salign.corpora import SyntheticCorpus, load_splits, synth_spec
from salign.synthdata import generate_corpus


class TestSyntheticCorpus:
    def test_load_generates(self, tiny_spec):
        """Loading without a cache generates the corpus."""
        corpus = SyntheticCorpus(tiny_spec, 6)
        assert corpus.load() == generate_corpus(tiny_spec, 6)

    def test_cache_hit_skips_generation(self, tiny_spec, tiny_corpus, mocker):
        """A cached corpus is returned without generating."""
        cache = MagicMock()
        cache.get.return_value = tiny_corpus[:6]
        generate = mocker.patch("salign.corpora.synthetic.generate_corpus")
        corpus = SyntheticCorpus(tiny_spec, 6, cache_manager=cache)
        assert corpus.load() == tiny_corpus[:6]
        generate.assert_not_called()
        cache.set.assert_not_called()

    def test_cache_miss_stores(self, tiny_spec, tmp_path):
        """A miss generates and writes the cache; the next load hits it."""
        cache = CacheManager(cache_dir=str(tmp_path))
        first = SyntheticCorpus(tiny_spec, 6, cache_manager=cache).load()
        assert len(list(tmp_path.glob("*.npz"))) == 1
        second = SyntheticCorpus(tiny_spec, 6, cache_manager=cache).load()
        assert first == second


class TestLoadSplits:
    def test_synthetic_split_sizes(self, tiny_experiment):
        """Splits follow n_train, n_valid and n_test."""
        train, valid, test = load_splits(tiny_experiment)
        assert (len(train), len(valid), len(test)) == (16, 4, 4)
        assert not {t.id for t in train} & {t.id for t in test}

    def test_same_data_seed_same_splits(self, tiny_experiment):
        """Two loads with the same data config are identical."""
        assert load_splits(tiny_experiment) == load_splits(tiny_experiment)

    def test_identity_translation(self, tiny_experiment):
        """data.translation=identity copies sources into targets."""
        tiny_experiment.data.translation = 'identity'
        train, _, _ = load_splits(tiny_experiment)
        assert all(t.src_tokens == t.tgt_tokens for t in train)

    def test_synth_spec_mirrors_data_section(self, tiny_experiment):
        """synth_spec copies the data section field by field."""
        spec = synth_spec(tiny_experiment.data)
        assert spec.vocab_size == 12
        assert spec.frames_per_token == (4, 6)
        assert spec.d_feat == 8
        assert spec.seed == 3
