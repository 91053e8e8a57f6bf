"""
Synthetic speech-translation corpora and manifest ingestion.

This module generates seeded (speech, transcription, translation) triples that
exhibit a controllable modality gap: the rendered speech is several times
longer than its transcription, noisy, and interrupted by blank (silence)
segments. It also reads and writes the on-disk manifest format and packs
examples into frame-bounded, right-padded batches.
"""

import csv
import logging
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .errors import ConfigurationError, IngestionError
from .utils import derive_rng, split_tokens

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ('<blank>', '<pad>', '<bos>', '<eos>')
BLANK_ID, PAD_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
N_SPECIAL = len(SPECIAL_TOKENS)

MANIFEST_HEADER = ['id', 'frames', 'n_frames', 'src_text', 'tgt_text']
FRAME_HEADER = struct.Struct('<II')

# Stream keys for derive_rng; per-example streams use the example index instead.
_PROTOTYPE_STREAM = 2 ** 31 - 1
_RULE_STREAM = 2 ** 31 - 2


class Vocabulary:
    """
    Token inventory shared by transcriptions and translations.

    Line number is the token id. Ids 0-3 are reserved for `<blank>`, `<pad>`,
    `<bos>` and `<eos>`.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:N_SPECIAL]) != SPECIAL_TOKENS:
            raise IngestionError(f"Vocabulary must start with the reserved tokens {SPECIAL_TOKENS}, got {tokens[:N_SPECIAL]}")
        if len(set(tokens)) != len(tokens):
            raise IngestionError("Vocabulary contains duplicate tokens.")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def synthetic(cls, vocab_size: int) -> 'Vocabulary':
        """Builds the vocabulary used by generated corpora: specials followed by w4, w5, ..."""
        return cls(list(SPECIAL_TOKENS) + [f"w{i}" for i in range(N_SPECIAL, vocab_size)])

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'Vocabulary':
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"Vocabulary file not found: {path}")
        lines = path.read_text(encoding='utf-8').splitlines()
        return cls([line.strip() for line in lines if line.strip()])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text('\n'.join(self.tokens) + '\n', encoding='utf-8')

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, text: str) -> List[int]:
        """Maps whitespace-separated text to ids. Raises KeyError on unknown tokens."""
        return [self._index[tok] for tok in split_tokens(text)]

    def decode(self, ids: Sequence[int]) -> str:
        """Maps ids back to text, dropping reserved tokens."""
        return ' '.join(self.tokens[i] for i in ids if i >= N_SPECIAL)


@dataclass(frozen=True)
class TranslationRule:
    """Deterministic source-to-target token mapping: optional permutation, then a cyclic offset."""
    permute: bool = True
    offset: int = 1

    @classmethod
    def identity(cls) -> 'TranslationRule':
        return cls(permute=False, offset=0)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic corpus. Identical specs yield identical corpora."""
    vocab_size: int = 40
    min_len: int = 3
    max_len: int = 8
    frames_per_token: Tuple[int, int] = (6, 10)
    blank_insert_rate: float = 0.2
    noise_std: float = 0.1
    d_feat: int = 64
    prototype_scale: float = 1.0
    translation_rule: TranslationRule = field(default_factory=TranslationRule)
    seed: int = 0

    def validate(self) -> None:
        """Raises ConfigurationError describing the first invalid field."""
        if self.vocab_size <= N_SPECIAL:
            raise ConfigurationError(f"vocab_size must exceed the {N_SPECIAL} reserved ids, got {self.vocab_size}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigurationError(f"Invalid sentence length range [{self.min_len}, {self.max_len}]")
        lo, hi = self.frames_per_token
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"Invalid frames_per_token range [{lo}, {hi}]")
        if not 0.0 <= self.blank_insert_rate <= 1.0:
            raise ConfigurationError(f"blank_insert_rate must be a probability, got {self.blank_insert_rate}")
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be nonnegative, got {self.noise_std}")
        if self.d_feat < 1:
            raise ConfigurationError(f"d_feat must be positive, got {self.d_feat}")

    @property
    def n_content(self) -> int:
        return self.vocab_size - N_SPECIAL

    def prototypes(self) -> np.ndarray:
        """Per-token prototype vectors [vocab_size x d_feat]. Reserved rows (blank included) are zero."""
        rng = derive_rng(self.seed, _PROTOTYPE_STREAM)
        table = rng.normal(0.0, self.prototype_scale, size=(self.vocab_size, self.d_feat))
        table[:N_SPECIAL] = 0.0
        return table

    def translation_table(self) -> np.ndarray:
        """Lookup table id -> translated id; reserved ids map to themselves."""
        n = self.n_content
        order = np.arange(n)
        if self.translation_rule.permute:
            order = derive_rng(self.seed, _RULE_STREAM).permutation(n)
        mapped = (order + self.translation_rule.offset) % n + N_SPECIAL
        return np.concatenate([np.arange(N_SPECIAL), mapped])

    def translate(self, src_tokens: Sequence[int]) -> List[int]:
        table = self.translation_table()
        return [int(table[t]) for t in src_tokens]

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(eq=False)
class Triple:
    """One training example: speech frames, transcription and translation."""
    id: str
    frames: np.ndarray
    src_tokens: List[int]
    tgt_tokens: List[int]

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Triple):
            return NotImplemented
        return (self.id == other.id
                and list(self.src_tokens) == list(other.src_tokens)
                and list(self.tgt_tokens) == list(other.tgt_tokens)
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames))


def _check_tokens(tokens: Sequence[int], vocab_size: int) -> None:
    for tok in tokens:
        if not N_SPECIAL <= int(tok) < vocab_size:
            raise ConfigurationError(f"Token id {tok} is outside the content range [{N_SPECIAL}, {vocab_size})")


def render_speech(src_tokens: Sequence[int], spec: SynthSpec, rng: np.random.Generator,
                  prototypes: Optional[np.ndarray] = None,
                  return_labels: bool = False) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    Renders a token sequence as a speech-like frame matrix.

    Each token becomes k ~ U{frames_per_token} copies of its prototype vector
    plus Gaussian noise. After each token a blank segment (zero prototype plus
    noise, also k frames long) follows with probability `blank_insert_rate`.

    Args:
        src_tokens: Content token ids.
        spec: The synthesis parameters.
        rng: The example's random stream.
        prototypes: Optional precomputed `spec.prototypes()`.
        return_labels: Also return the id each frame was rendered from
            (BLANK_ID inside blank segments).

    Returns:
        A float32 matrix [T_frames x d_feat], or (frames, labels) with
        `return_labels`.
    """
    _check_tokens(src_tokens, spec.vocab_size)
    if prototypes is None:
        prototypes = spec.prototypes()
    lo, hi = spec.frames_per_token
    segments, labels = [], []

    def _segment(token: int) -> None:
        k = int(rng.integers(lo, hi + 1))
        block = np.repeat(prototypes[token][None, :], k, axis=0)
        if spec.noise_std > 0:
            block = block + rng.normal(0.0, spec.noise_std, size=block.shape)
        segments.append(block)
        labels.append(np.full(k, token, dtype=np.int64))

    for tok in src_tokens:
        _segment(int(tok))
        if spec.blank_insert_rate > 0 and rng.random() < spec.blank_insert_rate:
            _segment(BLANK_ID)

    if not segments:
        frames, frame_labels = np.zeros((0, spec.d_feat), dtype=np.float32), np.zeros(0, dtype=np.int64)
    else:
        frames, frame_labels = np.concatenate(segments, axis=0).astype(np.float32), np.concatenate(labels)
    return (frames, frame_labels) if return_labels else frames


def generate_corpus(spec: SynthSpec, n: int) -> List[Triple]:
    """
    Generates n triples. The result is a pure function of (spec, n).

    Example i draws from its own stream derived from (seed, i), so examples can
    be generated independently and in any order.
    """
    spec.validate()
    if n < 1:
        raise ConfigurationError(f"Corpus size must be at least 1, got {n}")

    prototypes = spec.prototypes()
    table = spec.translation_table()
    triples = []
    for i in range(n):
        rng = derive_rng(spec.seed, i)
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [int(t) for t in rng.integers(N_SPECIAL, spec.vocab_size, size=length)]
        tgt = [int(table[t]) for t in src]
        frames = render_speech(src, spec, rng, prototypes)
        triples.append(Triple(id=f"syn{spec.seed}-{i:06d}", frames=frames, src_tokens=src, tgt_tokens=tgt))

    logger.debug(f"Generated {n} triples with seed {spec.seed}")
    return triples


# =============================================================================
# Manifest I/O
# =============================================================================

def write_frames(path: Union[str, Path], frames: np.ndarray) -> None:
    """Writes a frame matrix as an 8-byte (T, d) header followed by little-endian float32 values."""
    frames = np.ascontiguousarray(frames, dtype='<f4')
    with open(path, 'wb') as f:
        f.write(FRAME_HEADER.pack(frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes())


def read_frames(path: Union[str, Path]) -> np.ndarray:
    """Reads a frame matrix written by `write_frames`."""
    raw = Path(path).read_bytes()
    if len(raw) < FRAME_HEADER.size:
        raise IngestionError(f"Frame file too short for its header: {path}")
    t, d = FRAME_HEADER.unpack_from(raw)
    payload = raw[FRAME_HEADER.size:]
    if len(payload) != t * d * 4:
        raise IngestionError(f"Frame file {path} declares ({t}, {d}) but holds {len(payload)} bytes")
    return np.frombuffer(payload, dtype='<f4').reshape(t, d).astype(np.float32)


def write_manifest(triples: Sequence[Triple], out_dir: Union[str, Path], vocab: Vocabulary,
                   name: str = 'manifest.tsv') -> Path:
    """
    Writes triples as a manifest, one binary frame file per row, and the vocabulary.

    Returns:
        The path of the written manifest.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / 'frames'
    frames_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / 'vocab.txt')

    manifest_path = out_dir / name
    with open(manifest_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        for triple in triples:
            rel = Path('frames') / f"{triple.id}.bin"
            write_frames(out_dir / rel, triple.frames)
            writer.writerow([triple.id, rel.as_posix(), triple.n_frames,
                             vocab.decode(triple.src_tokens), vocab.decode(triple.tgt_tokens)])

    logger.info(f"Wrote manifest with {len(triples)} rows to {manifest_path}")
    return manifest_path


def load_manifest(path: Union[str, Path], vocab: Optional[Vocabulary] = None) -> List[Triple]:
    """
    Loads triples from a manifest.

    Frame paths are resolved against the manifest's directory. Text is
    tokenized by whitespace against `vocab`, which defaults to the
    `vocab.txt` next to the manifest.

    Raises:
        IngestionError: Missing files, malformed rows, duplicate ids, frame
            count mismatches or unknown tokens, naming the offending row.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"Manifest not found: {path}")

    lines = path.read_text(encoding='utf-8').splitlines()
    if not lines or (len(lines) == 1 and lines[0].split('\t') == MANIFEST_HEADER):
        logger.info(f"Manifest {path} is empty.")
        return []
    if lines[0].split('\t') != MANIFEST_HEADER:
        expected = '\t'.join(MANIFEST_HEADER)
        raise IngestionError(f"Manifest {path} has header {lines[0]!r}, expected {expected!r}")

    if vocab is None:
        vocab = Vocabulary.load(path.parent / 'vocab.txt')

    triples = []
    seen_ids = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split('\t')
        if len(fields) != len(MANIFEST_HEADER):
            raise IngestionError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} tab-separated fields, got {len(fields)}")
        row_id, frames_rel, n_frames, src_text, tgt_text = fields
        if row_id in seen_ids:
            raise IngestionError(f"{path}:{lineno}: duplicate id '{row_id}'")
        seen_ids.add(row_id)

        try:
            declared = int(n_frames)
        except ValueError:
            raise IngestionError(f"{path}:{lineno} ({row_id}): n_frames '{n_frames}' is not an integer")

        frames_path = path.parent / frames_rel
        if not frames_path.exists():
            raise IngestionError(f"{path}:{lineno} ({row_id}): frame file not found: {frames_path}")
        frames = read_frames(frames_path)
        if frames.shape[0] != declared:
            raise IngestionError(f"{path}:{lineno} ({row_id}): n_frames is {declared} but the frame file holds {frames.shape[0]}")
        if not np.all(np.isfinite(frames)):
            raise IngestionError(f"{path}:{lineno} ({row_id}): frame matrix contains non-finite values")

        try:
            src = vocab.encode(src_text)
            tgt = vocab.encode(tgt_text)
        except KeyError as e:
            raise IngestionError(f"{path}:{lineno} ({row_id}): unknown token {e}")

        triples.append(Triple(id=row_id, frames=frames, src_tokens=src, tgt_tokens=tgt))

    logger.info(f"Loaded {len(triples)} triples from {path}")
    return triples


# =============================================================================
# Batching
# =============================================================================

@dataclass
class Batch:
    """Right-padded tensors for a group of triples. Masks are True on valid cells."""
    ids: List[str]
    frames: torch.Tensor        # [B, T, d_feat]
    frame_mask: torch.Tensor    # [B, T]
    src: torch.Tensor           # [B, Ls]
    src_mask: torch.Tensor      # [B, Ls]
    tgt_in: torch.Tensor        # [B, Lt + 1], <bos> + y
    tgt_out: torch.Tensor       # [B, Lt + 1], y + <eos>
    tgt_mask: torch.Tensor      # [B, Lt + 1]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def padded_frames(self) -> int:
        return int(self.frames.shape[0] * self.frames.shape[1])


def _pad_tokens(seqs: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = max((len(s) for s in seqs), default=0)
    tokens = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, seq in enumerate(seqs):
        tokens[i, :len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
        mask[i, :len(seq)] = True
    return tokens, mask


def collate(triples: Sequence[Triple], dtype: torch.dtype = torch.float32) -> Batch:
    """Pads a list of triples into one Batch."""
    if not triples:
        raise ConfigurationError("Cannot collate an empty list of triples.")
    d_feat = triples[0].frames.shape[1]
    max_t = max(t.n_frames for t in triples)
    frames = torch.zeros((len(triples), max_t, d_feat), dtype=dtype)
    frame_mask = torch.zeros((len(triples), max_t), dtype=torch.bool)
    for i, triple in enumerate(triples):
        frames[i, :triple.n_frames] = torch.as_tensor(triple.frames, dtype=dtype)
        frame_mask[i, :triple.n_frames] = True

    src, src_mask = _pad_tokens([t.src_tokens for t in triples])
    tgt_in, tgt_mask = _pad_tokens([[BOS_ID] + list(t.tgt_tokens) for t in triples])
    tgt_out, _ = _pad_tokens([list(t.tgt_tokens) + [EOS_ID] for t in triples])
    return Batch(ids=[t.id for t in triples], frames=frames, frame_mask=frame_mask,
                 src=src, src_mask=src_mask, tgt_in=tgt_in, tgt_out=tgt_out, tgt_mask=tgt_mask)


def make_batches(dataset: Sequence[Triple], max_frames: int, shuffle_seed: int,
                 dtype: torch.dtype = torch.float32) -> List[Batch]:
    """
    Packs a dataset into batches whose padded frame total stays within max_frames.

    Examples are shuffled under `shuffle_seed`, stably sorted by frame count so
    similar lengths share a batch, packed greedily, and the batch order is
    shuffled again. The result partitions the dataset.

    Raises:
        ConfigurationError: If any example alone exceeds max_frames.
    """
    if not dataset:
        return []
    for triple in dataset:
        if triple.n_frames > max_frames:
            raise ConfigurationError(f"Example {triple.id} has {triple.n_frames} frames, more than max_frames={max_frames}")

    rng = derive_rng(shuffle_seed)
    order = rng.permutation(len(dataset))
    order = sorted(order, key=lambda i: dataset[i].n_frames)

    groups: List[List[int]] = []
    current: List[int] = []
    longest = 0
    for idx in order:
        n = dataset[idx].n_frames
        if current and (len(current) + 1) * max(longest, n) > max_frames:
            groups.append(current)
            current, longest = [], 0
        current.append(idx)
        longest = max(longest, n)
    if current:
        groups.append(current)

    batches = [collate([dataset[i] for i in groups[g]], dtype=dtype) for g in rng.permutation(len(groups))]
    logger.debug(f"Packed {len(dataset)} examples into {len(batches)} batches (max_frames={max_frames})")
    return batches
