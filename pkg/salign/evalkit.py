"""
Decoding and metrics.

MT and ST are decoded autoregressively with beam search; ASR is decoded
non-autoregressively from the CTC head (per-frame argmax, collapse repeats,
drop blanks). Translations are scored with corpus BLEU (4-gram, brevity
penalty, exponential smoothing of zero precisions, computed the way
sacreBLEU computes it) and transcriptions with corpus WER.
"""

import logging
import math
import sys
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from .errors import EmptyInputError
from .network import EncoderOutput
from .synthdata import BLANK_ID, BOS_ID, EOS_ID, PAD_ID, Triple, make_batches
from .utils import collapse_path

logger = logging.getLogger(__name__)

NGRAM_ORDER = 4
BANNED_TOKENS = (BLANK_ID, PAD_ID, BOS_ID)

Tokens = Union[str, Sequence]


@dataclass
class DecodeResult:
    """One hypothesis. `tokens` end with <eos> iff `finished`; `score` is the summed log-probability."""
    tokens: List[int]
    score: float
    finished: bool

    def normalized_score(self, length_penalty: float) -> float:
        return self.score / (max(len(self.tokens), 1) ** length_penalty)

    @property
    def content(self) -> List[int]:
        """Tokens without the trailing <eos>."""
        return self.tokens[:-1] if self.finished else list(self.tokens)


def _next_log_probs(model, encoder_out: EncoderOutput, prefixes: List[List[int]]) -> torch.Tensor:
    """Log-distribution over the next token for each prefix, with non-output ids banned."""
    prev = torch.tensor([[BOS_ID] + p for p in prefixes], dtype=torch.long, device=encoder_out.reps.device)
    logits = model.decoder_forward(encoder_out.expand(len(prefixes)), prev)[:, -1]
    log_probs = torch.log_softmax(logits.double(), dim=-1)
    log_probs[:, list(BANNED_TOKENS)] = float('-inf')
    return log_probs


@torch.no_grad()
def greedy_decode(model, encoder_out: EncoderOutput, max_len: int) -> DecodeResult:
    """Stepwise argmax decoding of a single sequence."""
    tokens, score = [], 0.0
    while len(tokens) < max_len:
        log_probs = _next_log_probs(model, encoder_out, [tokens])[0]
        token = int(log_probs.argmax())
        tokens.append(token)
        score += float(log_probs[token])
        if token == EOS_ID:
            return DecodeResult(tokens, score, True)
    return DecodeResult(tokens, score, False)


@torch.no_grad()
def beam_search(model, encoder_out: EncoderOutput, beam: int = 8, max_len: int = 32,
                length_penalty: float = 1.0, return_all: bool = False) -> Union[DecodeResult, List[DecodeResult]]:
    """
    Length-normalized beam search for one source sequence.

    At each step the alive hypotheses are expanded and candidates ranked by
    log-probability, ties broken by token ids. An <eos> candidate ranked
    within the top `beam` finishes; the best `beam` others stay alive. The
    search stops once `beam` hypotheses have finished or at `max_len`, where
    the alive ones are returned unfinished. Finished hypotheses are preferred,
    then compared by score / len^length_penalty.

    Args:
        model: Anything with `decoder_forward(encoder_out, prev_tokens) -> logits`.
        encoder_out: A batch-of-one encoder output.
        return_all: Return every collected hypothesis, best first.
    """
    if beam < 1:
        raise ValueError(f"beam must be at least 1, got {beam}")
    alive: List[Tuple[List[int], float]] = [([], 0.0)]
    finished: List[DecodeResult] = []

    for _ in range(max_len):
        log_probs = _next_log_probs(model, encoder_out, [tokens for tokens, _ in alive])
        width = min(2 * beam, log_probs.shape[1])
        top_scores, top_ids = log_probs.topk(width, dim=-1)
        candidates = []
        for i, (tokens, score) in enumerate(alive):
            for s, t in zip(top_scores[i].tolist(), top_ids[i].tolist()):
                if s != float('-inf'):
                    candidates.append((score + s, tokens + [t]))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        alive = []
        for rank, (score, tokens) in enumerate(candidates):
            if tokens[-1] == EOS_ID:
                if rank < beam:
                    finished.append(DecodeResult(tokens, score, True))
            elif len(alive) < beam:
                alive.append((tokens, score))
        if len(finished) >= beam or not alive:
            break

    unfinished = [DecodeResult(tokens, score, False) for tokens, score in alive]
    ranked = sorted(finished, key=lambda r: (-r.normalized_score(length_penalty), r.tokens))
    ranked += sorted(unfinished, key=lambda r: (-r.normalized_score(length_penalty), r.tokens))
    if not ranked:
        ranked = [DecodeResult([], 0.0, False)]
    return ranked if return_all else ranked[0]


def ctc_greedy_decode(ctc_log_probs: Union[torch.Tensor, np.ndarray], length: Optional[int] = None) -> List[int]:
    """Per-frame argmax over the first `length` frames, repeats collapsed, blanks removed."""
    scores = ctc_log_probs.detach().cpu().numpy() if isinstance(ctc_log_probs, torch.Tensor) else np.asarray(ctc_log_probs)
    if length is not None:
        scores = scores[:length]
    return collapse_path(scores.argmax(axis=-1).tolist(), BLANK_ID)


# =============================================================================
# Metrics
# =============================================================================

def _split(seq: Tokens) -> List[str]:
    return seq.split() if isinstance(seq, str) else [str(t) for t in seq]


def extract_ngrams(tokens: List[str], max_order: int = NGRAM_ORDER) -> Counter:
    ngrams = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            ngrams[tuple(tokens[i:i + n])] += 1
    return ngrams


def my_log(num: float) -> float:
    """log floored to a very low number at zero."""
    return -9999999999 if num == 0.0 else math.log(num)


def corpus_bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """
    Corpus-level BLEU in [0, 100].

    Hypotheses and references are token sequences or whitespace-tokenized
    strings, one reference per hypothesis.

    Raises:
        EmptyInputError: For an empty corpus.
        ValueError: If the two lists differ in length.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise EmptyInputError("Cannot compute BLEU on an empty corpus.")

    correct = [0] * NGRAM_ORDER
    total = [0] * NGRAM_ORDER
    sys_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens, ref_tokens = _split(hyp), _split(ref)
        sys_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        hyp_ngrams = extract_ngrams(hyp_tokens)
        ref_ngrams = extract_ngrams(ref_tokens)
        for ngram, count in hyp_ngrams.items():
            n = len(ngram) - 1
            total[n] += count
            correct[n] += min(count, ref_ngrams.get(ngram, 0))

    precisions = [0.0] * NGRAM_ORDER
    smooth_mteval = 1.0
    for n in range(NGRAM_ORDER):
        if total[n] == 0:
            break
        if correct[n] == 0:
            smooth_mteval *= 2
            precisions[n] = 100.0 / (smooth_mteval * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]

    brevity_penalty = 1.0
    if sys_len < ref_len:
        brevity_penalty = math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0
    return brevity_penalty * math.exp(sum(map(my_log, precisions)) / NGRAM_ORDER)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit substitution, insertion and deletion costs."""
    if len(a) > len(b):
        a, b = b, a
    current = list(range(len(a) + 1))
    for i in range(1, len(b) + 1):
        previous, current = current, [i] + [0] * len(a)
        for j in range(1, len(a) + 1):
            change = previous[j - 1] + (a[j - 1] != b[i - 1])
            current[j] = min(previous[j] + 1, current[j - 1] + 1, change)
    return current[len(a)]


def wer(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """
    Corpus word error rate: total edit distance over total reference tokens. May exceed 1.

    Raises:
        EmptyInputError: If the references hold no tokens.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    edits = words = 0
    for hyp, ref in zip(hypotheses, references):
        ref_tokens = _split(ref)
        words += len(ref_tokens)
        edits += levenshtein(_split(hyp), ref_tokens)
    if words == 0:
        raise EmptyInputError("Cannot compute WER against an empty reference corpus.")
    return edits / words


# =============================================================================
# Model evaluation
# =============================================================================

@dataclass
class TaskReport:
    """One line of the evaluation report."""
    task: str
    metric: str
    value: float
    n_sentences: int
    beam: Optional[int]
    checkpoint: str

    def to_dict(self) -> Dict:
        return {'task': self.task, 'metric': self.metric, 'value': self.value,
                'n_sentences': self.n_sentences, 'beam': self.beam, 'checkpoint': self.checkpoint}


@torch.no_grad()
def decode_dataset(model, dataset: Sequence[Triple], task: str, beam: int = 8, max_len: int = 32,
                   length_penalty: float = 1.0, max_frames: int = 4000,
                   dtype: torch.dtype = torch.float32) -> Tuple[List[List[int]], List[List[int]]]:
    """
    Decodes every triple for one task.

    Returns:
        (hypotheses, references) as token-id lists in dataset order.
    """
    model.eval()
    hyps: Dict[str, List[int]] = {}
    refs: Dict[str, List[int]] = {}
    batches = make_batches(dataset, max_frames, shuffle_seed=0, dtype=dtype)
    for batch in tqdm(batches, desc=f"decode-{task}", unit="batch", file=sys.stdout, disable=None, leave=False):
        if task == 'mt':
            encoded = model.encode_text(batch.src, batch.src_mask)
        else:
            h_aenc, encoded, ctc_lp = model.encode_speech(batch.frames, batch.frame_mask)
        for i, ex_id in enumerate(batch.ids):
            if task == 'asr':
                hyps[ex_id] = ctc_greedy_decode(ctc_lp[i], int(h_aenc.lengths[i]))
                refs[ex_id] = batch.src[i, :int(batch.src_mask[i].sum())].tolist()
            else:
                result = beam_search(model, encoded.select(i), beam=beam, max_len=max_len,
                                     length_penalty=length_penalty)
                hyps[ex_id] = result.content
                refs[ex_id] = batch.tgt_out[i, :int(batch.tgt_mask[i].sum()) - 1].tolist()
    order = [t.id for t in dataset]
    return [hyps[i] for i in order], [refs[i] for i in order]


def evaluate_model(model, dataset: Sequence[Triple], beam: int = 8, max_len: int = 32,
                   length_penalty: float = 1.0, checkpoint: str = "", max_frames: int = 4000,
                   tasks: Sequence[str] = ('st', 'mt', 'asr'),
                   dtype: torch.dtype = torch.float32) -> Dict[str, TaskReport]:
    """ST and MT BLEU by beam search, ASR WER by CTC greedy decoding, from one model."""
    if not dataset:
        raise EmptyInputError("Cannot evaluate on an empty dataset.")
    reports = {}
    for task in tasks:
        hyps, refs = decode_dataset(model, dataset, task, beam, max_len, length_penalty, max_frames, dtype)
        if task == 'asr':
            value, metric, task_beam = wer(hyps, refs), 'wer', None
        else:
            value, metric, task_beam = corpus_bleu(hyps, refs), 'bleu', beam
        reports[task] = TaskReport(task=task, metric=metric, value=float(value), n_sentences=len(hyps),
                                   beam=task_beam, checkpoint=checkpoint)
        logger.info(f"{task.upper()} {metric.upper()} = {value:.4f} over {len(hyps)} sentences")
    return reports
