"""
Enhanced adversarial training: continuous modality labels.

A mix-up rate p ~ U(0, 1) is drawn for each batch. Below the threshold τ the
speech side is mixed: acoustic-encoder positions whose CTC prediction is a
real token are swapped, each with probability p, for that token's text
embedding. Otherwise the text side is noised to look like speech: after each
token, with probability 1 − p, a blank or a repeat of the token is inserted.
Either way the result is labeled p and is only ever shown to the
discriminator.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from .errors import EmptyInputError, InfeasibleTargetError, ShapeError
from .experiment import ContinuityConfig
from .network import EncoderOutput
from .objectives import ctc_forced_align
from .synthdata import BLANK_ID

logger = logging.getLogger(__name__)

ST_MIX = 'st_mix'
MT_NOISE = 'mt_noise'


@dataclass
class MixOutcome:
    """A mixed or noised batch for the discriminator, labeled with its mix-up rates."""
    sequence: EncoderOutput
    labels: torch.Tensor                        # [B], the sampled p per row
    branches: List[str]
    replaced: Optional[torch.Tensor] = None     # [B, T] True where an acoustic row became an embedding
    inserted: Optional[torch.Tensor] = None     # [B, L'] True on inserted noise elements
    repeated: Optional[torch.Tensor] = None     # [B, L'] True on inserted repeats (subset of inserted)
    source_rows: List[int] = field(default_factory=list)

    @property
    def branch(self) -> str:
        kinds = set(self.branches)
        return self.branches[0] if len(kinds) == 1 else 'both'

    @property
    def label(self) -> float:
        return float(self.labels[0])

    @property
    def replaced_positions(self) -> List[tuple]:
        return [] if self.replaced is None else [tuple(ix) for ix in self.replaced.nonzero().tolist()]

    @property
    def inserted_positions(self) -> List[tuple]:
        return [] if self.inserted is None else [tuple(ix) for ix in self.inserted.nonzero().tolist()]


def sample_mix_rate(rng: np.random.Generator) -> float:
    """One draw of the mix-up rate p from U(0, 1)."""
    return float(rng.random())


def branch_for(p: float, tau: float) -> str:
    return ST_MIX if p < tau else MT_NOISE


def _row_rates(p: Union[float, Sequence[float]], n: int) -> np.ndarray:
    rates = np.full(n, float(p)) if np.ndim(p) == 0 else np.asarray(p, dtype=np.float64)
    if rates.shape != (n,):
        raise ShapeError(f"Expected {n} mix-up rates, got shape {rates.shape}")
    return rates


def mix_st_sequence(h_aenc: EncoderOutput, ctc_log_probs: torch.Tensor, embedding_table: torch.Tensor,
                    p: Union[float, Sequence[float]], rng: np.random.Generator,
                    replacement_tokens: Optional[torch.Tensor] = None) -> MixOutcome:
    """
    Replaces acoustic positions by text embeddings with probability p each.

    Eligible positions are valid (unmasked) and carry a non-blank replacement
    token: the per-frame CTC argmax, or `replacement_tokens` when given (e.g. a
    forced alignment to the gold transcription).

    Args:
        h_aenc: Acoustic-encoder output [B, T, d].
        ctc_log_probs: CTC log-distributions [B, T, vocab] aligned with h_aenc.
        embedding_table: Rows used as replacements [vocab, d] (already scaled).
        p: Mix-up rate, one for the batch or one per row.
    """
    if ctc_log_probs.shape[:2] != h_aenc.reps.shape[:2]:
        raise ShapeError(f"CTC log-probs {tuple(ctc_log_probs.shape)} do not match acoustic output {tuple(h_aenc.reps.shape)}")
    b, t, _ = h_aenc.reps.shape
    tokens = ctc_log_probs.argmax(dim=-1) if replacement_tokens is None else replacement_tokens
    if tokens.shape != (b, t):
        raise ShapeError(f"Replacement tokens {tuple(tokens.shape)} do not match acoustic output [{b}, {t}]")
    rates = _row_rates(p, b)

    eligible = h_aenc.mask & (tokens != BLANK_ID)
    draws = torch.from_numpy(rng.random((b, t)) < rates[:, None]).to(eligible.device)
    replaced = eligible & draws
    rows = embedding_table[tokens].to(h_aenc.reps.dtype)
    reps = torch.where(replaced.unsqueeze(-1), rows, h_aenc.reps)
    return MixOutcome(sequence=EncoderOutput(reps, h_aenc.mask),
                      labels=torch.as_tensor(rates, dtype=h_aenc.reps.dtype),
                      branches=[ST_MIX] * b, replaced=replaced, source_rows=list(range(b)))


def noise_mt_sequence(emb_seq: EncoderOutput, p: Union[float, Sequence[float]], blank_embedding: torch.Tensor,
                      rng: np.random.Generator) -> MixOutcome:
    """
    Inserts audio-like noise into embedded text.

    Each of the L slots after a token gets, with probability 1 − p, one
    inserted element: the blank embedding or a copy of that token, 50/50.
    """
    b = emb_seq.reps.shape[0]
    lengths = emb_seq.lengths.tolist()
    if b == 0 or min(lengths) < 1:
        raise EmptyInputError("Cannot noise an empty text sequence.")
    rates = _row_rates(p, b)

    rows, inserted_rows, repeated_rows = [], [], []
    for i, length in enumerate(lengths):
        insert = rng.random(length) < (1.0 - rates[i])
        use_repeat = rng.random(length) < 0.5
        out, ins, rep = [], [], []
        for j in range(length):
            token = emb_seq.reps[i, j]
            out.append(token)
            ins.append(False)
            rep.append(False)
            if insert[j]:
                out.append(token if use_repeat[j] else blank_embedding.to(token.dtype))
                ins.append(True)
                rep.append(bool(use_repeat[j]))
        rows.append(torch.stack(out))
        inserted_rows.append(ins)
        repeated_rows.append(rep)

    width = max(len(r) for r in rows)
    d = emb_seq.reps.shape[-1]
    reps = emb_seq.reps.new_zeros((b, width, d))
    mask = torch.zeros((b, width), dtype=torch.bool, device=reps.device)
    inserted = torch.zeros_like(mask)
    repeated = torch.zeros_like(mask)
    for i, row in enumerate(rows):
        reps[i, :len(row)] = row
        mask[i, :len(row)] = True
        inserted[i, :len(row)] = torch.tensor(inserted_rows[i], dtype=torch.bool)
        repeated[i, :len(row)] = torch.tensor(repeated_rows[i], dtype=torch.bool)
    return MixOutcome(sequence=EncoderOutput(reps, mask), labels=torch.as_tensor(rates, dtype=reps.dtype),
                      branches=[MT_NOISE] * b, inserted=inserted, repeated=repeated, source_rows=list(range(b)))


def gold_replacement_tokens(ctc_log_probs: torch.Tensor, lengths: torch.Tensor,
                            src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
    """
    Per-frame gold tokens from a forced alignment of each transcription.

    Rows that cannot be aligned fall back to the CTC argmax.
    """
    tokens = ctc_log_probs.argmax(dim=-1).clone()
    for i in range(src.shape[0]):
        target = src[i, :int(src_mask[i].sum())].tolist()
        n = int(lengths[i])
        try:
            tokens[i, :n] = torch.tensor(ctc_forced_align(ctc_log_probs[i], target, input_len=n), dtype=torch.long)
        except InfeasibleTargetError:
            logger.debug(f"Row {i} cannot be force-aligned; using CTC argmax")
    return tokens


def _concat(parts: List[EncoderOutput]) -> EncoderOutput:
    width = max(p.reps.shape[1] for p in parts)
    reps = torch.cat([torch.nn.functional.pad(p.reps, (0, 0, 0, width - p.reps.shape[1])) for p in parts])
    mask = torch.cat([torch.nn.functional.pad(p.mask, (0, width - p.mask.shape[1])) for p in parts])
    return EncoderOutput(reps, mask)


class MixedSequenceBuilder:
    """
    Builds the discriminator's mixed batch for one training step.

    Everything it returns is detached from the encoders; the caller feeds
    `sequence` through the textual encoder and then the discriminator only.
    """

    def __init__(self, model, cfg: ContinuityConfig):
        self.model = model
        self.cfg = cfg
        self.logger = logging.getLogger("MixedSequenceBuilder")

    def build(self, rng: np.random.Generator, h_aenc: EncoderOutput, ctc_log_probs: torch.Tensor,
              st_src: torch.Tensor, st_src_mask: torch.Tensor,
              mt_src: torch.Tensor, mt_src_mask: torch.Tensor) -> MixOutcome:
        n = h_aenc.reps.shape[0] if self.cfg.per == 'example' else 1
        rates = np.array([sample_mix_rate(rng) for _ in range(n)])
        st_rows = np.nonzero(rates < self.cfg.tau)[0]
        mt_rows = np.nonzero(rates >= self.cfg.tau)[0]

        outcomes = []
        if len(st_rows):
            outcomes.append(self._st_mix(st_rows, rates, rng, h_aenc, ctc_log_probs, st_src, st_src_mask))
        if len(mt_rows):
            outcomes.append(self._mt_noise(mt_rows, rates, rng, mt_src, mt_src_mask))
        if len(outcomes) == 1:
            return outcomes[0]
        return MixOutcome(sequence=_concat([o.sequence for o in outcomes]),
                          labels=torch.cat([o.labels for o in outcomes]),
                          branches=[b for o in outcomes for b in o.branches],
                          source_rows=[r for o in outcomes for r in o.source_rows])

    def _st_mix(self, rows, rates, rng, h_aenc, ctc_log_probs, st_src, st_src_mask) -> MixOutcome:
        if self.cfg.per == 'batch':
            index, p = torch.arange(h_aenc.reps.shape[0]), float(rates[0])
        else:
            index, p = torch.as_tensor(rows), rates[rows]
        h = EncoderOutput(h_aenc.reps[index].detach(), h_aenc.mask[index])
        lp = ctc_log_probs[index].detach()
        replacement = None
        if self.cfg.replacement_source == 'gold':
            replacement = gold_replacement_tokens(lp, h.lengths, st_src[index], st_src_mask[index])
        table = self.model.token_embedding(torch.arange(self.model.cfg.vocab_size, device=lp.device)).detach()
        outcome = mix_st_sequence(h, lp, table, p, rng, replacement_tokens=replacement)
        outcome.source_rows = index.tolist()
        return outcome

    def _mt_noise(self, rows, rates, rng, mt_src, mt_src_mask) -> MixOutcome:
        if self.cfg.per == 'batch':
            index, p = torch.arange(mt_src.shape[0]), float(rates[0])
        else:
            index, p = torch.as_tensor(rows) % mt_src.shape[0], rates[rows]
        emb = EncoderOutput(self.model.token_embedding(mt_src[index]).detach(), mt_src_mask[index])
        blank = self.model.token_embedding(torch.tensor(BLANK_ID, device=mt_src.device)).detach()
        outcome = noise_mt_sequence(emb, p, blank, rng)
        outcome.sequence = self.model.with_positions(outcome.sequence)
        outcome.source_rows = index.tolist()
        return outcome
