"""
Pytest-style tests for the objectives module.

This test suite verifies the CTC forward algorithm against hand-enumerated
and brute-force oracles, the cross-entropy reduction, the soft-target
adversarial losses, the symmetric contrastive loss and the weighted total.
"""

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import assume, given, settings, strategies as st

from salign.errors import DegenerateBatchError, InfeasibleTargetError, ShapeError
from salign.objectives import (C_MT, C_ST, C_U, AdversarialBatchLabel, LossBreakdown, binary_entropy, ce_loss,
                               contrastive_loss, ctc_forced_align, ctc_log_prob_bruteforce, ctc_loss,
                               ctc_loss_batch, ctc_min_frames, discriminator_loss, generator_loss, soft_bce,
                               total_loss, with_total)
from salign.utils import collapse_path


def _uniform(t_len, vocab):
    return torch.full((t_len, vocab), -math.log(vocab), dtype=torch.float64)


def _random_log_probs(seed, t_len, vocab):
    gen = torch.Generator().manual_seed(seed)
    return torch.log_softmax(torch.randn(t_len, vocab, generator=gen, dtype=torch.float64) * 2, dim=-1)


class TestCTC:
    def test_single_frame(self):
        """With one frame the loss is -log of the target's probability."""
        lp = torch.log(torch.tensor([[0.7, 0.3]], dtype=torch.float64))
        assert ctc_loss(lp, [1]).item() == pytest.approx(-math.log(0.3), abs=1e-12)

    def test_single_frame_certain(self):
        lp = torch.log(torch.tensor([[0.0, 1.0]], dtype=torch.float64))
        assert ctc_loss(lp, [1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_two_frames_uniform(self):
        """Paths (a,a), (blank,a), (a,blank) give P = 0.75."""
        assert ctc_loss(_uniform(2, 2), [1]).item() == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_three_frames_two_labels(self):
        """Five of the 27 paths collapse to 'ab'."""
        assert ctc_loss(_uniform(3, 3), [1, 2]).item() == pytest.approx(-math.log(5 / 27), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), t_len=st.integers(1, 4),
           target=st.lists(st.integers(1, 2), min_size=1, max_size=3))
    def test_matches_bruteforce(self, seed, t_len, target):
        """The forward algorithm agrees with enumerating every frame-level path."""
        assume(ctc_min_frames(target) <= t_len)
        lp = _random_log_probs(seed, t_len, 3)
        expected = -ctc_log_prob_bruteforce(lp, target)
        assert ctc_loss(lp, target).item() == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_probabilities_sum_to_one(self):
        """Summed over every reachable target, CTC probabilities total one."""
        lp = _random_log_probs(5, 3, 3)
        targets = {tuple(collapse_path(p)) for p in itertools.product(range(3), repeat=3)}
        total = 0.0
        for target in targets:
            if target:
                total += math.exp(-ctc_loss(lp, list(target)).item())
            else:
                total += math.exp(float(lp[:, 0].sum()))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_matches_torch_ctc(self):
        """Batch losses agree with torch's reference implementation."""
        gen = torch.Generator().manual_seed(3)
        lp = torch.log_softmax(torch.randn(3, 6, 5, generator=gen, dtype=torch.float64), dim=-1)
        targets = torch.tensor([[1, 2, 2], [3, 4, 0], [4, 0, 0]])
        target_mask = torch.tensor([[True, True, True], [True, True, False], [True, False, False]])
        input_lengths = torch.tensor([6, 5, 2])
        loss, feasible = ctc_loss_batch(lp, input_lengths, targets, target_mask)
        assert feasible.all()
        reference = F.ctc_loss(lp.transpose(0, 1), targets, input_lengths, target_mask.sum(1),
                               blank=0, reduction='none')
        assert loss.item() == pytest.approx(reference.mean().item(), rel=1e-9)

    def test_gradients_match_torch_ctc(self):
        gen = torch.Generator().manual_seed(4)
        logits = torch.randn(2, 5, 4, generator=gen, dtype=torch.float64, requires_grad=True)
        targets = torch.tensor([[1, 2], [3, 0]])
        mask = torch.tensor([[True, True], [True, False]])
        lengths = torch.tensor([5, 5])
        ours, _ = ctc_loss_batch(torch.log_softmax(logits, -1), lengths, targets, mask)
        (g_ours,) = torch.autograd.grad(ours, logits)
        ref = F.ctc_loss(torch.log_softmax(logits, -1).transpose(0, 1), targets, lengths, mask.sum(1),
                         reduction='none').mean()
        (g_ref,) = torch.autograd.grad(ref, logits)
        torch.testing.assert_close(g_ours, g_ref, rtol=1e-7, atol=1e-9)

    def test_infeasible_target_raises(self):
        """A repeated label needs a blank between its copies."""
        assert ctc_min_frames([1, 1]) == 3
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(_uniform(2, 2), [1, 1])

    def test_blank_in_target_raises(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(_uniform(3, 3), [0, 1])

    def test_batch_skips_infeasible_rows(self, caplog):
        """Infeasible rows are dropped and named in a warning."""
        lp = _uniform(2, 3).unsqueeze(0).expand(2, -1, -1)
        targets = torch.tensor([[1, 1], [2, 0]])
        mask = torch.tensor([[True, True], [True, False]])
        with caplog.at_level("WARNING"):
            loss, feasible = ctc_loss_batch(lp, torch.tensor([2, 2]), targets, mask, ids=['bad', 'good'])
        assert feasible.tolist() == [False, True]
        assert 'bad' in caplog.text
        assert loss.item() == pytest.approx(ctc_loss(_uniform(2, 3), [2]).item(), rel=1e-12)

    def test_batch_all_infeasible_is_zero(self):
        lp = _uniform(1, 3).unsqueeze(0)
        loss, feasible = ctc_loss_batch(lp, torch.tensor([1]), torch.tensor([[1, 2]]),
                                        torch.tensor([[True, True]]))
        assert not feasible.any()
        assert loss.item() == 0.0

    def test_forced_alignment(self):
        """The Viterbi path follows the dominant frame labels and collapses to the target."""
        wanted = [1, 1, 0, 2]
        probs = np.full((4, 3), 0.05)
        probs[np.arange(4), wanted] = 0.9
        path = ctc_forced_align(np.log(probs), [1, 2])
        assert path == wanted
        assert collapse_path(path) == [1, 2]


class TestCrossEntropy:
    def test_uniform_logits(self):
        """Uniform logits over V classes cost ln V per counted token."""
        logits = torch.zeros(2, 4, 5, dtype=torch.float64)
        target = torch.tensor([[4, 4, 2, 1], [3, 3, 3, 1]])
        mask = torch.tensor([[True, True, True, False], [True, True, True, False]])
        assert ce_loss(logits, target, mask).item() == pytest.approx(3 * math.log(5), rel=1e-12)

    def test_confident_logits(self):
        target = torch.tensor([[1, 2, 3]])
        logits = F.one_hot(target, 5).double() * 50
        assert ce_loss(logits, target, torch.ones(1, 3, dtype=torch.bool)).item() < 1e-15

    def test_all_padding_is_zero(self, caplog):
        logits = torch.randn(1, 3, 5)
        with caplog.at_level("WARNING"):
            loss = ce_loss(logits, torch.zeros(1, 3, dtype=torch.long), torch.zeros(1, 3, dtype=torch.bool))
        assert loss.item() == 0.0
        assert 'no unmasked positions' in caplog.text

    def test_padding_does_not_count(self):
        """Garbage logits under padding leave the loss unchanged."""
        target = torch.tensor([[4, 2, 0]])
        mask = torch.tensor([[True, True, False]])
        a = torch.zeros(1, 3, 5)
        b = a.clone()
        b[0, 2] = torch.tensor([100.0, -100.0, 3.0, 7.0, 1.0])
        assert ce_loss(a, target, mask).item() == pytest.approx(ce_loss(b, target, mask).item())


class TestAdversarialLosses:
    def test_perfect_discriminator(self):
        eps = 1e-7
        assert discriminator_loss(eps, 1 - eps, eps).item() == pytest.approx(0.0, abs=1e-6)

    def test_confused_discriminator(self):
        assert discriminator_loss(0.5, 0.5).item() == pytest.approx(2 * math.log(2), abs=1e-4)
        assert discriminator_loss(0.5, 0.5).item() == pytest.approx(1.3863, abs=1e-4)

    def test_wrong_on_speech(self):
        """d_st=0.9 and d_mt=0.9 cost -ln 0.1 - ln 0.9."""
        assert discriminator_loss(0.9, 0.9).item() == pytest.approx(2.4079, abs=1e-4)

    def test_batch_means(self):
        d_st = torch.tensor([0.1, 0.3])
        d_mt = torch.tensor([0.8, 0.6, 0.9])
        expected = -(math.log(0.9) + math.log(0.7)) / 2 - (math.log(0.8) + math.log(0.6) + math.log(0.9)) / 3
        assert discriminator_loss(d_st, d_mt).item() == pytest.approx(expected, rel=1e-5)

    def test_mixed_term(self):
        """A mixed sequence adds its BCE against the mix-up rate."""
        loss = discriminator_loss(0.5, 0.5, d_mix=torch.tensor([0.3]), p=0.3)
        assert loss.item() == pytest.approx(2 * math.log(2) + binary_entropy(0.3), abs=1e-5)

    def test_generator_at_half(self):
        assert generator_loss(0.5).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_soft_target_minimum(self):
        """For t=0.3 the loss is minimized at d=0.3 with value ≈ 0.6109."""
        grid = torch.linspace(0.01, 0.99, 981, dtype=torch.float64)
        values = soft_bce(grid, 0.3)
        assert grid[values.argmin()].item() == pytest.approx(0.3, abs=1e-3)
        assert values.min().item() == pytest.approx(0.6109, abs=1e-4)

    def test_clamp_keeps_loss_finite(self):
        assert torch.isfinite(soft_bce(0.0, 1.0)).all()
        assert torch.isfinite(soft_bce(1.0, 0.0)).all()

    @pytest.mark.parametrize("t", [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0])
    def test_generator_loss_bounded_by_entropy(self, t):
        """For every target the soft-target loss never drops below the binary entropy of that target."""
        grid = torch.linspace(0.001, 0.999, 999, dtype=torch.float64)
        values = soft_bce(grid, t)
        assert bool((values >= binary_entropy(t) - 1e-9).all())
        assert generator_loss(grid, t).item() >= binary_entropy(t) - 1e-9

    def test_labels(self):
        """Pure speech targets c_st, pure text c_mt, mixed sequences their rate."""
        assert AdversarialBatchLabel.pure_speech(3).target.tolist() == [C_ST] * 3
        assert AdversarialBatchLabel.pure_text(2).target.tolist() == [C_MT] * 2
        mixed = AdversarialBatchLabel.mixed(0.25, 3, 'st_mix')
        assert mixed.kind == 'mixed_st' and mixed.target.tolist() == [0.25] * 3
        noised = AdversarialBatchLabel.mixed([0.4, 0.6], 2, 'mt_noise', dtype=torch.float64)
        assert noised.kind == 'noised_mt'
        assert noised.target.tolist() == pytest.approx([0.4, 0.6])
        both = AdversarialBatchLabel.mixed(torch.tensor([0.05, 0.7], dtype=torch.float64), 2, 'both')
        assert both.kind == 'mixed' and both.target.dtype == torch.float64 and len(both) == 2
        assert C_U == 0.5

    def test_unknown_label_kind(self):
        with pytest.raises(ValueError):
            AdversarialBatchLabel(torch.zeros(1), 'other')

    @pytest.mark.parametrize("target", [torch.tensor([0.5, 1.5]), torch.tensor([-0.1])])
    def test_label_outside_unit_interval(self, target):
        with pytest.raises(ValueError):
            AdversarialBatchLabel(target, 'mixed_st')

    def test_label_count_must_match(self):
        with pytest.raises(ShapeError):
            AdversarialBatchLabel.mixed([0.2, 0.3], 3, 'st_mix')
        with pytest.raises(ShapeError):
            AdversarialBatchLabel(torch.zeros(2, 2), 'mixed_st')

    def test_discriminator_loss_takes_labels(self):
        """A label and its raw rates give the same loss; a label for the wrong batch size is rejected."""
        d_mix = torch.tensor([0.3, 0.6])
        label = AdversarialBatchLabel.mixed([0.2, 0.7], 2, 'both')
        assert discriminator_loss(0.4, 0.6, d_mix=d_mix, p=label).item() == \
            pytest.approx(discriminator_loss(0.4, 0.6, d_mix=d_mix, p=torch.tensor([0.2, 0.7])).item())
        with pytest.raises(ShapeError):
            discriminator_loss(0.4, 0.6, d_mix=torch.tensor([0.3]), p=label)


class TestContrastive:
    def test_hand_case(self):
        """Identity similarities at temperature 1 cost -ln(e / (e + 1)) in each direction."""
        h = torch.eye(2, dtype=torch.float64)
        expected = -math.log(math.e / (math.e + 1))
        assert contrastive_loss(h, h, temperature=1.0).item() == pytest.approx(expected, rel=1e-12)

    def test_matched_pairs_are_optimal(self):
        """Matched orthogonal pairs score lower than every other pairing."""
        h = torch.eye(4, dtype=torch.float64)
        matched = contrastive_loss(h, h).item()
        for perm in itertools.permutations(range(4)):
            if list(perm) != list(range(4)):
                assert matched < contrastive_loss(h, h[list(perm)]).item()

    def test_symmetric(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(3, 4, generator=gen, dtype=torch.float64)
        b = torch.randn(3, 4, generator=gen, dtype=torch.float64)
        assert contrastive_loss(a, b).item() == pytest.approx(contrastive_loss(b, a).item(), rel=1e-12)

    def test_scale_invariant(self):
        """Cosine similarity ignores the norm, so scaling both inputs by 5 changes nothing."""
        gen = torch.Generator().manual_seed(1)
        a = torch.randn(4, 6, generator=gen, dtype=torch.float64)
        b = torch.randn(4, 6, generator=gen, dtype=torch.float64)
        assert contrastive_loss(5 * a, 5 * b).item() == pytest.approx(contrastive_loss(a, b).item(), rel=1e-12)

    def test_single_pair_raises(self):
        with pytest.raises(DegenerateBatchError):
            contrastive_loss(torch.ones(1, 3), torch.ones(1, 3))


class TestTotalLoss:
    def test_weighted_sum(self):
        """All parts 1, weights (1, 0.5, 1) and lambda 3.5 give 13.0."""
        parts = LossBreakdown(asr=1.0, mt=1.0, st=1.0, disc=1.0, gen_st=1.0, gen_mt=1.0)
        assert total_loss(parts, 1.0, 0.5, 1.0, 3.5) == pytest.approx(13.0)

    def test_lambda_zero_drops_adversarial_terms(self):
        parts = LossBreakdown(asr=1.0, mt=1.0, st=1.0, disc=1.0, gen_st=1.0, gen_mt=1.0)
        assert total_loss(parts, 1.0, 0.5, 1.0, 0.0) == pytest.approx(2.5)

    def test_all_zero(self):
        assert total_loss(LossBreakdown(), 1.0, 0.5, 1.0, 3.5) == 0.0

    def test_zero_weight_hides_nan(self):
        """A NaN in a zero-weight term never reaches the total."""
        parts = LossBreakdown(asr=1.0, contrastive=float('nan'))
        assert total_loss(parts, 1.0, 0.5, 1.0, 3.5, w_contrastive=0.0) == pytest.approx(1.0)

    def test_contrastive_weight(self):
        parts = LossBreakdown(st=2.0, contrastive=3.0)
        assert total_loss(parts, 1.0, 0.5, 1.0, 0.0, w_contrastive=1.0) == pytest.approx(5.0)

    def test_with_total_and_record(self):
        parts = with_total(LossBreakdown(asr=torch.tensor(2.0), mt=1.0), w_asr=1.0, w_mt=0.5, w_st=1.0, lam=3.5)
        record = parts.to_record()
        assert record['total'] == pytest.approx(2.5)
        assert set(record) == {'asr', 'mt', 'st', 'disc', 'gen_st', 'gen_mt', 'contrastive', 'total'}


class TestGradientChecks:
    """Analytic gradients of every loss agree with central finite differences in double precision."""

    @staticmethod
    def _inputs(*shape, seed=0):
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(*shape, generator=gen, dtype=torch.float64, requires_grad=True)

    def test_ctc(self):
        x = self._inputs(5, 4)
        assert torch.autograd.gradcheck(lambda z: ctc_loss(torch.log_softmax(z, -1), [1, 2]), (x,))

    def test_ctc_batch(self):
        x = self._inputs(2, 5, 4)
        targets = torch.tensor([[1, 2], [3, 1]])
        mask = torch.tensor([[True, True], [True, False]])

        def fn(z):
            loss, _ = ctc_loss_batch(torch.log_softmax(z, -1), torch.tensor([5, 4]), targets, mask)
            return loss

        assert torch.autograd.gradcheck(fn, (x,))

    def test_cross_entropy(self):
        x = self._inputs(2, 3, 5)
        target = torch.tensor([[1, 2, 3], [4, 0, 1]])
        mask = torch.tensor([[True, True, True], [True, True, False]])
        assert torch.autograd.gradcheck(lambda z: ce_loss(z, target, mask), (x,))

    def test_discriminator(self):
        a, b, m = self._inputs(3), self._inputs(3, seed=1), self._inputs(2, seed=2)
        p = torch.tensor([0.2, 0.7], dtype=torch.float64)

        def fn(x, y, z):
            return discriminator_loss(torch.sigmoid(x), torch.sigmoid(y), d_mix=torch.sigmoid(z), p=p)

        assert torch.autograd.gradcheck(fn, (a, b, m))

    def test_generator(self):
        x = self._inputs(4)
        assert torch.autograd.gradcheck(lambda z: generator_loss(torch.sigmoid(z)), (x,))

    def test_contrastive(self):
        a, b = self._inputs(3, 4), self._inputs(3, 4, seed=1)
        assert torch.autograd.gradcheck(lambda x, y: contrastive_loss(x, y, temperature=0.5), (a, b))

    def test_total(self):
        x = self._inputs(7)

        def fn(z):
            parts = LossBreakdown(*z.unbind())
            return total_loss(parts, w_asr=1.0, w_mt=0.5, w_st=1.0, lam=3.5, w_contrastive=0.3)

        assert torch.autograd.gradcheck(fn, (x,))
