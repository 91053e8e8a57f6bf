"""
Training objectives.

Every loss is a differentiable scalar torch function: CTC for ASR,
cross-entropy for MT/ST, soft-target binary cross-entropy for the modal
discriminator and the generators, symmetric InfoNCE for the contrastive
(hard alignment) baseline, and the weighted total. Reductions are summed
over time and averaged over the batch so loss curves are comparable across
batch sizes.
"""

import itertools
import logging
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import logsumexp

from .errors import DegenerateBatchError, InfeasibleTargetError, ShapeError
from .synthdata import BLANK_ID
from .utils import collapse_path

logger = logging.getLogger(__name__)

# Finite stand-in for log(0): keeps gradients of unreachable lattice states at exactly zero.
LOG_0 = -1e10

C_ST = 0.0
C_MT = 1.0
C_U = 0.5

Number = Union[float, torch.Tensor]


@dataclass
class AdversarialBatchLabel:
    """Per-sequence soft modality target for one discriminator call."""
    target: torch.Tensor
    kind: str       # pure_speech | pure_text | mixed_st | noised_mt | mixed

    KINDS = ('pure_speech', 'pure_text', 'mixed_st', 'noised_mt', 'mixed')
    BRANCH_KINDS = {'st_mix': 'mixed_st', 'mt_noise': 'noised_mt', 'both': 'mixed'}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"Unknown label kind '{self.kind}'")
        if self.target.dim() != 1:
            raise ShapeError(f"Label targets must be one per sequence, got shape {tuple(self.target.shape)}")
        if not bool(((self.target >= C_ST) & (self.target <= C_MT)).all()):
            raise ValueError(f"Label targets must lie in [{C_ST}, {C_MT}], got {self.target.tolist()}")

    def __len__(self) -> int:
        return self.target.shape[0]

    @classmethod
    def pure_speech(cls, n: int, dtype=torch.float32) -> 'AdversarialBatchLabel':
        return cls(torch.full((n,), C_ST, dtype=dtype), 'pure_speech')

    @classmethod
    def pure_text(cls, n: int, dtype=torch.float32) -> 'AdversarialBatchLabel':
        return cls(torch.full((n,), C_MT, dtype=dtype), 'pure_text')

    @classmethod
    def mixed(cls, p: Union[float, Sequence[float], torch.Tensor], n: int, branch: str,
              dtype: Optional[torch.dtype] = None) -> 'AdversarialBatchLabel':
        """Targets equal to the mix-up rate(s) of a batch built by `branch` (st_mix, mt_noise or both)."""
        if branch not in cls.BRANCH_KINDS:
            raise ValueError(f"Unknown mix branch '{branch}'")
        target = torch.as_tensor(p, dtype=dtype)
        if target.dim() == 0:
            target = target.expand(n).clone()
        if target.shape != (n,):
            raise ShapeError(f"Expected {n} mix-up rates, got shape {tuple(target.shape)}")
        return cls(target, cls.BRANCH_KINDS[branch])


@dataclass
class LossBreakdown:
    """All loss components of one step. `total` is filled by total_loss()."""
    asr: Number = 0.0
    mt: Number = 0.0
    st: Number = 0.0
    disc: Number = 0.0
    gen_st: Number = 0.0
    gen_mt: Number = 0.0
    contrastive: Number = 0.0
    total: Number = 0.0

    def to_record(self) -> Dict[str, float]:
        return {f.name: _number(getattr(self, f.name)) for f in fields(self)}


def _number(value: Number) -> float:
    return value.detach().item() if isinstance(value, torch.Tensor) else float(value)


# =============================================================================
# CTC
# =============================================================================

def ctc_min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit `target`: one frame per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _label_to_path(targets: torch.Tensor, blank: int) -> torch.Tensor:
    """[B, L] labels -> [B, 2L+1] blank-augmented lattice labels."""
    b, length = targets.shape
    path = torch.full((b, 2 * length + 1), blank, dtype=torch.long, device=targets.device)
    path[:, 1::2] = targets
    return path


def _ctc_log_likelihood(log_probs: torch.Tensor, input_lengths: torch.Tensor,
                        targets: torch.Tensor, target_lengths: torch.Tensor, blank: int) -> torch.Tensor:
    """Forward algorithm in log space over a batch. Returns log P(target | input) per row."""
    b, t_max, _ = log_probs.shape
    targets = targets.masked_fill(torch.arange(targets.shape[1], device=targets.device)[None, :] >= target_lengths[:, None], blank)
    path = _label_to_path(targets, blank)
    n_states = path.shape[1]
    path_lens = 2 * target_lengths + 1

    emit = log_probs.gather(2, path.unsqueeze(1).expand(b, t_max, n_states))   # [B, T, S]
    state = torch.arange(n_states, device=log_probs.device)
    outside = state[None, :] >= path_lens[:, None]
    skip_ok = torch.zeros_like(path, dtype=torch.bool)
    skip_ok[:, 2:] = (path[:, 2:] != blank) & (path[:, 2:] != path[:, :-2])

    log0 = log_probs.new_full((b, n_states), LOG_0)
    alpha = torch.where(state[None, :] < 2, emit[:, 0], log0)
    alpha = torch.where(outside, log0, alpha)
    for t in range(1, t_max):
        stay = alpha
        step = torch.cat([log0[:, :1], alpha[:, :-1]], dim=1)
        skip = torch.where(skip_ok, torch.cat([log0[:, :2], alpha[:, :-2]], dim=1), log0)
        new = torch.logsumexp(torch.stack([stay, step, skip]), dim=0) + emit[:, t]
        new = torch.where(outside, log0, new)
        alpha = torch.where((t < input_lengths)[:, None], new, alpha)

    last = (path_lens - 1).unsqueeze(1)
    end_blank = alpha.gather(1, last).squeeze(1)
    end_label = alpha.gather(1, (last - 1).clamp(min=0)).squeeze(1)
    end_label = torch.where(path_lens > 1, end_label, torch.full_like(end_label, LOG_0))
    return torch.logsumexp(torch.stack([end_blank, end_label]), dim=0)


def ctc_loss(log_probs: torch.Tensor, target: Sequence[int], input_len: Optional[int] = None,
             target_len: Optional[int] = None, blank: int = BLANK_ID) -> torch.Tensor:
    """
    Negative CTC log-likelihood of one target given per-frame log-distributions [T, vocab].

    Raises:
        InfeasibleTargetError: If the target contains the blank id or cannot be
            emitted in `input_len` frames.
    """
    if log_probs.dim() != 2:
        raise ShapeError(f"ctc_loss expects [T, vocab] log-probabilities, got {tuple(log_probs.shape)}")
    input_len = log_probs.shape[0] if input_len is None else int(input_len)
    target = [int(x) for x in target]
    target = target[:len(target) if target_len is None else int(target_len)]
    if blank in target:
        raise InfeasibleTargetError("CTC target contains the blank id.")
    needed = ctc_min_frames(target)
    if needed > input_len:
        raise InfeasibleTargetError(f"Target of length {len(target)} needs {needed} frames, only {input_len} available.")

    targets = torch.tensor([target], dtype=torch.long, device=log_probs.device).reshape(1, len(target))
    ll = _ctc_log_likelihood(log_probs[:input_len].unsqueeze(0),
                             torch.tensor([input_len], device=log_probs.device),
                             targets, torch.tensor([len(target)], device=log_probs.device), blank)
    return -ll[0]


def ctc_loss_batch(log_probs: torch.Tensor, input_lengths: torch.Tensor, targets: torch.Tensor,
                   target_mask: torch.Tensor, ids: Optional[Sequence[str]] = None,
                   blank: int = BLANK_ID) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Batch CTC loss averaged over feasible rows.

    Rows whose target cannot be emitted in the available frames are dropped
    with a warning naming them.

    Returns:
        (loss, feasible) where `feasible` is a boolean mask over rows.
    """
    target_lengths = target_mask.sum(dim=1)
    feasible = torch.tensor([ctc_min_frames(targets[i, :int(target_lengths[i])].tolist()) <= int(input_lengths[i])
                             for i in range(targets.shape[0])], dtype=torch.bool, device=log_probs.device)
    if not bool(feasible.all()):
        names = [ids[i] if ids else str(i) for i in range(len(feasible)) if not feasible[i]]
        logger.warning(f"Skipping {len(names)} CTC-infeasible example(s): {', '.join(names)}")
    if not bool(feasible.any()):
        return log_probs.sum() * 0.0, feasible

    rows = feasible.nonzero().squeeze(1)
    ll = _ctc_log_likelihood(log_probs[rows], input_lengths[rows], targets[rows], target_lengths[rows], blank)
    return -ll.mean(), feasible


def ctc_log_prob_bruteforce(log_probs: Union[np.ndarray, torch.Tensor], target: Sequence[int],
                            blank: int = BLANK_ID) -> float:
    """log P_CTC(target) by enumerating every frame-level path. Exponential; small instances only."""
    lp = log_probs.detach().cpu().double().numpy() if isinstance(log_probs, torch.Tensor) else np.asarray(log_probs, dtype=np.float64)
    t_len, vocab = lp.shape
    target = [int(x) for x in target]
    scores = [lp[np.arange(t_len), list(path)].sum()
              for path in itertools.product(range(vocab), repeat=t_len)
              if collapse_path(path, blank) == target]
    return float(logsumexp(scores)) if scores else float('-inf')


def ctc_forced_align(log_probs: Union[np.ndarray, torch.Tensor], target: Sequence[int],
                     input_len: Optional[int] = None, blank: int = BLANK_ID) -> List[int]:
    """
    Viterbi best frame-level path that collapses to `target`.

    Returns:
        One label per frame (blank or a target token) for the first `input_len` frames.
    """
    lp = log_probs.detach().cpu().double().numpy() if isinstance(log_probs, torch.Tensor) else np.asarray(log_probs, dtype=np.float64)
    input_len = lp.shape[0] if input_len is None else int(input_len)
    target = [int(x) for x in target]
    if ctc_min_frames(target) > input_len:
        raise InfeasibleTargetError(f"Cannot align {len(target)} labels to {input_len} frames.")
    path = [blank]
    for token in target:
        path += [token, blank]
    n_states = len(path)

    score = np.full((input_len, n_states), -np.inf)
    back = np.zeros((input_len, n_states), dtype=np.int64)
    score[0, 0] = lp[0, path[0]]
    if n_states > 1:
        score[0, 1] = lp[0, path[1]]
    for t in range(1, input_len):
        for s in range(n_states):
            options = [(score[t - 1, s], s)]
            if s >= 1:
                options.append((score[t - 1, s - 1], s - 1))
            if s >= 2 and path[s] != blank and path[s] != path[s - 2]:
                options.append((score[t - 1, s - 2], s - 2))
            best, origin = max(options, key=lambda o: o[0])
            score[t, s] = best + lp[t, path[s]]
            back[t, s] = origin

    ends = [n_states - 1] + ([n_states - 2] if n_states > 1 else [])
    state = max(ends, key=lambda s: score[input_len - 1, s])
    labels = [0] * input_len
    for t in range(input_len - 1, -1, -1):
        labels[t] = path[state]
        state = back[t, state]
    return labels


# =============================================================================
# Cross-entropy and adversarial terms
# =============================================================================

def ce_loss(logits: torch.Tensor, target: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
    """
    Teacher-forced cross-entropy: summed over unmasked positions, averaged over sequences.

    `pad_mask` is True on positions that count. A target with no counted
    position yields zero (and a logged warning) instead of a NaN.
    """
    if logits.dim() == 2:
        logits, target, pad_mask = logits.unsqueeze(0), target.unsqueeze(0), pad_mask.unsqueeze(0)
    if logits.shape[:2] != target.shape or target.shape != pad_mask.shape:
        raise ShapeError(f"logits {tuple(logits.shape)}, target {tuple(target.shape)} and mask {tuple(pad_mask.shape)} do not line up")

    n_seqs = int((pad_mask.sum(dim=1) > 0).sum())
    if n_seqs == 0:
        logger.warning("Cross-entropy target has no unmasked positions; loss is 0.")
        return logits.sum() * 0.0
    nll = F.cross_entropy(logits.transpose(1, 2), target.masked_fill(~pad_mask, 0), reduction='none')
    return nll.masked_fill(~pad_mask, 0.0).sum() / n_seqs


def soft_bce(d: Number, t: Number, eps: float = 1e-7) -> torch.Tensor:
    """Elementwise −[t·log d + (1−t)·log(1−d)] with d clamped to [eps, 1−eps]."""
    d = torch.as_tensor(d, dtype=torch.float64) if not isinstance(d, torch.Tensor) else d
    t = torch.as_tensor(t, dtype=d.dtype, device=d.device)
    d = d.clamp(eps, 1.0 - eps)
    return -(t * torch.log(d) + (1.0 - t) * torch.log1p(-d))


def discriminator_loss(d_st: Number, d_mt: Number, eps: float = 1e-7, d_mix: Optional[Number] = None,
                       p: Optional[Union[Number, AdversarialBatchLabel]] = None) -> torch.Tensor:
    """
    BCE(d_st, c_st=0) + BCE(d_mt, c_mt=1), each averaged over its batch.

    With a mixed sequence, its BCE against the mix-up rate `p` (a number, a
    per-row tensor or an AdversarialBatchLabel) is added.
    """
    loss = soft_bce(d_st, C_ST, eps).mean() + soft_bce(d_mt, C_MT, eps).mean()
    if d_mix is not None:
        if isinstance(p, AdversarialBatchLabel):
            if torch.as_tensor(d_mix).numel() != len(p):
                raise ShapeError(f"{torch.as_tensor(d_mix).numel()} mixed outputs for {len(p)} labels")
            p = p.target
        loss = loss + soft_bce(d_mix, p, eps).mean()
    return loss


def generator_loss(d_out: Number, target: Number = C_U, eps: float = 1e-7) -> torch.Tensor:
    """Soft-target BCE pulling the discriminator's output toward `target` (c_u by default)."""
    return soft_bce(d_out, target, eps).mean()


def binary_entropy(t: float) -> float:
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return float(-(t * np.log(t) + (1 - t) * np.log(1 - t)))


def contrastive_loss(h_st_pool: torch.Tensor, h_mt_pool: torch.Tensor, temperature: float = 0.05) -> torch.Tensor:
    """
    Symmetric InfoNCE over in-batch negatives with cosine similarity.

    Row i of each input is the positive pair of row i of the other. The value
    is the mean of the speech-to-text and text-to-speech cross-entropies.

    Raises:
        DegenerateBatchError: With fewer than two pairs there are no negatives.
    """
    if h_st_pool.shape != h_mt_pool.shape or h_st_pool.dim() != 2:
        raise ShapeError(f"Pooled inputs must be matching [B, d], got {tuple(h_st_pool.shape)} and {tuple(h_mt_pool.shape)}")
    if h_st_pool.shape[0] < 2:
        raise DegenerateBatchError("Contrastive loss needs at least two pairs in the batch.")
    sim = F.normalize(h_st_pool, dim=-1) @ F.normalize(h_mt_pool, dim=-1).T / temperature
    labels = torch.arange(sim.shape[0], device=sim.device)
    return 0.5 * (F.cross_entropy(sim, labels) + F.cross_entropy(sim.T, labels))


def total_loss(parts: LossBreakdown, w_asr: float, w_mt: float, w_st: float, lam: float,
               w_contrastive: float = 0.0) -> Number:
    """
    w_asr·asr + w_mt·mt + w_st·st + λ·(disc + gen_st + gen_mt) + w_contrastive·contrastive.

    Terms with zero weight are left out, so a zero-weight component cannot
    inject a NaN into the objective.
    """
    total = 0.0
    for weight, value in ((w_asr, parts.asr), (w_mt, parts.mt), (w_st, parts.st)):
        if weight != 0:
            total = total + weight * value
    if lam != 0:
        total = total + lam * (parts.disc + parts.gen_st + parts.gen_mt)
    if w_contrastive != 0:
        total = total + w_contrastive * parts.contrastive
    return total


def with_total(parts: LossBreakdown, **weights) -> LossBreakdown:
    """Returns a copy of `parts` with `total` filled in."""
    return replace(parts, total=total_loss(parts, **weights))
