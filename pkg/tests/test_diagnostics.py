"""
Pytest-style tests for the diagnostics module.

Covers the PCA projection against a direct eigen-decomposition, the
modality report on identical and separated clouds, the probe
discriminator, and the curve exports.
"""

import logging

import numpy as np
import pandas as pd
import pytest
import torch

from salign.diagnostics import (CURVE_COLUMNS, SCATTER_COLUMNS, curves_frame, diagnose_model, export_curves,
                                export_scatter, fit_probe, loss_reversal, modality_report, pca_project,
                                pool_representations)
from salign.errors import EmptyInputError, ShapeError
from salign.network import ModalDiscriminator, SAlignModel


def _clouds(n=20, d=3, offset=5.0, seed=0):
    rng = np.random.default_rng(seed)
    st = rng.normal(size=(n, d)) - offset
    mt = rng.normal(size=(n, d)) + offset
    return st, mt


def _record(step, disc, gen_st, gen_mt, phase='finetune'):
    return {'phase': phase, 'step': step, 'disc': disc, 'gen_st': gen_st, 'gen_mt': gen_mt,
            'asr': 1.0, 'mt': 2.0, 'st': 3.0, 'acc': 0.5}


class TestPCA:
    def test_axis_aligned_variances(self):
        """Points spread 4:1 along the axes give those variances and axis directions."""
        x = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        result = pca_project(x)
        np.testing.assert_allclose(result.variance_explained, [8 / 3, 2 / 3])
        np.testing.assert_allclose(result.components, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(result.points, x, atol=1e-12)

    def test_matches_eigendecomposition(self):
        x = np.random.default_rng(4).normal(size=(10, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
        result = pca_project(x)
        expected = np.sort(np.linalg.eigvalsh(np.cov(x.T)))[::-1][:2]
        np.testing.assert_allclose(result.variance_explained, expected)
        np.testing.assert_allclose(result.components @ result.components.T, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(result.points.var(axis=0, ddof=1), expected)
        np.testing.assert_allclose(result.points.mean(axis=0), 0.0, atol=1e-10)

    def test_sign_convention(self):
        """The largest-magnitude loading of every component is positive."""
        x = np.random.default_rng(5).normal(size=(12, 4))
        for comp in pca_project(x).components:
            assert comp[np.argmax(np.abs(comp))] > 0

    def test_duplicated_points(self):
        """Listing every point twice keeps the directions and projections; the variances rescale by 2(N-1)/(2N-1)."""
        x = np.random.default_rng(6).normal(size=(8, 3)) * np.array([3.0, 1.5, 0.5])
        once, twice = pca_project(x), pca_project(np.vstack([x, x]))
        np.testing.assert_allclose(twice.components, once.components, atol=1e-10)
        np.testing.assert_allclose(twice.points, np.vstack([once.points, once.points]), atol=1e-10)
        np.testing.assert_allclose(twice.variance_explained, once.variance_explained * 2 * 7 / 15)

    def test_rank_deficient_data_is_zero_filled(self, caplog):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with caplog.at_level(logging.WARNING):
            result = pca_project(x)
        assert result.variance_explained[1] == 0.0
        assert np.all(result.points[:, 1] == 0.0)
        assert "Degenerate spectrum" in caplog.text

    def test_too_few_points(self):
        with pytest.raises(ShapeError):
            pca_project(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        x = np.ones((4, 2))
        x[0, 0] = np.nan
        with pytest.raises(ValueError):
            pca_project(x)


class TestModalityReport:
    def test_identical_sets(self):
        """The same cloud on both sides gives zero distance and chance accuracy for any classifier."""
        st, _ = _clouds()
        disc = ModalDiscriminator(3, 8, 3).double()
        report = modality_report(st, st.copy(), disc)
        assert report.centroid_distance == pytest.approx(0.0)
        assert report.discriminator_accuracy == pytest.approx(0.5)

    def test_separated_clouds(self):
        st, mt = _clouds()
        report = modality_report(st, mt, lambda x: (x[:, 0] > 0).astype(float))
        assert report.discriminator_accuracy == 1.0
        assert report.centroid_distance == pytest.approx(np.linalg.norm(st.mean(0) - mt.mean(0)))
        assert report.variance_explained[0] > report.variance_explained[1] > 0

    def test_scatter_layout(self):
        st, mt = _clouds(n=5)
        report = modality_report(st, mt, lambda x: np.full(len(x), 0.5), ids=list("abcde"))
        assert list(report.scatter.columns) == SCATTER_COLUMNS
        assert report.scatter['modality'].value_counts().to_dict() == {'speech': 5, 'text': 5}
        assert report.scatter['id'].tolist() == list("abcde") * 2
        assert report.to_dict()['n_points'] == 10

    def test_threshold_is_inclusive_for_text(self):
        """A probability of exactly 0.5 counts as text."""
        st, mt = _clouds(n=4)
        report = modality_report(st, mt, lambda x: np.full(len(x), 0.5))
        assert report.discriminator_accuracy == 0.5

    def test_empty_set(self):
        with pytest.raises(EmptyInputError):
            modality_report(np.zeros((0, 3)), np.ones((4, 3)), lambda x: x[:, 0])


class TestProbe:
    def test_probe_separates_clouds(self):
        st, mt = _clouds()
        probe = fit_probe(st, mt, hidden=8, layers=3, steps=200)
        assert modality_report(st, mt, probe).discriminator_accuracy == 1.0

    def test_probe_is_seeded(self):
        st, mt = _clouds()
        a = fit_probe(st, mt, hidden=8, steps=5, seed=1)
        b = fit_probe(st, mt, hidden=8, steps=5, seed=1)
        for pa, pb in zip(a.parameters(), b.parameters()):
            torch.testing.assert_close(pa, pb)

    def test_probe_leaves_global_rng_alone(self):
        st, mt = _clouds()
        torch.manual_seed(0)
        expected = torch.rand(1)
        torch.manual_seed(0)
        fit_probe(st, mt, hidden=8, steps=1)
        torch.testing.assert_close(torch.rand(1), expected)


class TestModelDiagnostics:
    def test_pools_in_dataset_order(self, double_model, tiny_corpus):
        data = tiny_corpus[:6]
        ids, st_pool, mt_pool = pool_representations(double_model, data, dtype=torch.float64)
        assert ids == [t.id for t in data]
        assert st_pool.shape == mt_pool.shape == (6, 8)

    def test_diagnose_model(self, tiny_experiment, tiny_corpus):
        torch.manual_seed(0)
        model = SAlignModel(tiny_experiment.model)
        report, own = diagnose_model(model, tiny_corpus[:12], tiny_corpus[12:], tiny_experiment)
        assert 0.0 <= report.discriminator_accuracy <= 1.0
        assert 0.0 <= own <= 1.0
        assert len(report.scatter) == 24

    def test_empty_dataset(self, double_model):
        with pytest.raises(EmptyInputError):
            pool_representations(double_model, [])


class TestCurves:
    def test_frame_columns_and_generator_sum(self):
        log = [_record(1, 1.4, 0.7, 0.6), _record(2, 1.3, 0.8, 0.7)]
        frame = curves_frame(log)
        assert list(frame.columns) == CURVE_COLUMNS
        assert frame['gen'].tolist() == pytest.approx([1.3, 1.5])

    def test_pretrain_records_are_skipped(self):
        log = [_record(1, 0.0, 0.0, 0.0, phase='pretrain'), _record(2, 1.3, 0.8, 0.7)]
        assert curves_frame(log)['step'].tolist() == [2]

    def test_no_finetune_records(self):
        with pytest.raises(EmptyInputError):
            curves_frame([_record(1, 0.0, 0.0, 0.0, phase='pretrain')])

    def test_export_curves(self, tmp_path):
        log = [_record(s, 1.0 + s, 1.0, 1.0) for s in range(1, 4)]
        out = tmp_path / "diag" / "curves.csv"
        export_curves(log, out)
        written = pd.read_csv(out)
        assert list(written.columns) == CURVE_COLUMNS
        assert written['step'].tolist() == [1, 2, 3]

    def test_export_with_plot(self, tmp_path):
        log = [_record(s, 1.0 + s, 1.0, 1.0) for s in range(1, 4)]
        export_curves(log, tmp_path / "curves.csv", plot=True)
        assert (tmp_path / "curves.png").exists()

    def test_export_scatter(self, tmp_path):
        st, mt = _clouds(n=5)
        report = modality_report(st, mt, lambda x: (x[:, 0] > 0).astype(float))
        path = export_scatter(report, tmp_path / "scatter.csv", plot=True)
        assert list(pd.read_csv(path).columns) == SCATTER_COLUMNS
        assert (tmp_path / "scatter.png").exists()

    def test_loss_reversal(self):
        frame = pd.DataFrame({'disc': [1.0, 2.0, 3.0, 4.0], 'gen': [4.0, 3.0, 2.0, 1.0]})
        assert loss_reversal(frame) == pytest.approx(-1.0)

    def test_loss_reversal_needs_three_points(self):
        assert np.isnan(loss_reversal(pd.DataFrame({'disc': [1.0, 2.0], 'gen': [2.0, 1.0]})))
