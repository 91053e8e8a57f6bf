"""
The speech translation model: acoustic encoder, shared textual encoder,
autoregressive decoder and the modal discriminator.

All modules are pre-norm Transformers over right-padded batches. Every
sequence travels as an EncoderOutput (representations plus a validity mask);
padded rows are zeroed on entry and exit of every module and excluded from
attention and pooling, so values stored in padding never reach valid outputs.
"""

import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyInputError, IncompatibleCheckpointError, ShapeError
from .experiment import ModelConfig
from .utils import content_hash

logger = logging.getLogger(__name__)


@dataclass
class EncoderOutput:
    """Time-major representations [B, T, d] with a validity mask [B, T] (True = valid)."""
    reps: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        if self.reps.dim() != 3 or self.mask.dim() != 2 or self.reps.shape[:2] != self.mask.shape:
            raise ShapeError(f"EncoderOutput reps {tuple(self.reps.shape)} and mask {tuple(self.mask.shape)} do not line up")

    @property
    def lengths(self) -> torch.Tensor:
        return self.mask.sum(dim=1)

    def detach(self) -> 'EncoderOutput':
        return EncoderOutput(self.reps.detach(), self.mask)

    def select(self, index: int) -> 'EncoderOutput':
        """The index-th sequence as a batch of one, trimmed to its valid length."""
        length = int(self.mask[index].sum())
        return EncoderOutput(self.reps[index:index + 1, :length], self.mask[index:index + 1, :length])

    def expand(self, n: int) -> 'EncoderOutput':
        """Repeats a batch-of-one output n times (for beam search)."""
        return EncoderOutput(self.reps.expand(n, -1, -1), self.mask.expand(n, -1))


def masked_mean(reps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid time steps: [B, T, d] -> [B, d]."""
    counts = mask.sum(dim=1)
    if bool((counts == 0).any()):
        raise EmptyInputError("Cannot pool a sequence without valid positions.")
    summed = reps.masked_fill(~mask.unsqueeze(-1), 0.0).sum(dim=1)
    return summed / counts.unsqueeze(-1).to(reps.dtype)


def sinusoidal_positions(length: int, d_model: int, dtype: torch.dtype, device=None) -> torch.Tensor:
    """Absolute sinusoidal position table [length, d_model]."""
    position = torch.arange(length, dtype=torch.float64, device=device).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64, device=device) * (-math.log(10000.0) / d_model))
    table = torch.zeros(length, d_model, dtype=torch.float64, device=device)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, :d_model // 2]
    return table.to(dtype)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with key-padding and optional causal masking."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, memory: torch.Tensor, key_mask: torch.Tensor,
                causal: bool = False) -> torch.Tensor:
        b, tq, d = query.shape
        tk = memory.shape[1]
        q = self.q_proj(query).view(b, tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(memory).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(memory).masked_fill(~key_mask.unsqueeze(-1), 0.0)
        v = v.view(b, tk, self.n_heads, self.d_head).transpose(1, 2)

        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_head)
        allowed = key_mask[:, None, None, :]
        if causal:
            allowed = allowed & torch.ones(tq, tk, dtype=torch.bool, device=query.device).tril()
        scores = scores.masked_fill(~allowed, float('-inf'))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        context = torch.matmul(weights, v).transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(context)


class TransformerLayer(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, dropout: float, cross: bool = False):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.self_norm = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dropout) if cross else None
        self.cross_norm = nn.LayerNorm(d_model) if cross else None
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(ffn_dim, d_model))
        self.ffn_norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, causal: bool = False,
                memory: Optional[EncoderOutput] = None) -> torch.Tensor:
        h = self.self_norm(x)
        x = x + self.dropout(self.self_attn(h, h, mask, causal=causal))
        if self.cross_attn is not None:
            x = x + self.dropout(self.cross_attn(self.cross_norm(x), memory.reps, memory.mask))
        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class TransformerStack(nn.Module):
    """N encoder layers followed by a final LayerNorm."""

    def __init__(self, n_layers: int, d_model: int, n_heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList([TransformerLayer(d_model, n_heads, ffn_dim, dropout) for _ in range(n_layers)])
        self.norm = nn.LayerNorm(d_model)

    def forward(self, enc_in: EncoderOutput) -> EncoderOutput:
        pad = ~enc_in.mask.unsqueeze(-1)
        x = enc_in.reps.masked_fill(pad, 0.0)
        for layer in self.layers:
            x = layer(x, enc_in.mask)
        return EncoderOutput(self.norm(x).masked_fill(pad, 0.0), enc_in.mask)


class AcousticEncoder(nn.Module):
    """Speech frames -> token-level representations (stride-2 convolutions, then Transformer layers)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        if cfg.input_projection or cfg.d_feat != d:
            self.input_proj = nn.Linear(cfg.d_feat, d)
        else:
            self.input_proj = nn.Identity()
        self.subsample = nn.ModuleList([nn.Conv1d(d, d, kernel_size=3, stride=2, padding=1)
                                        for _ in range(cfg.subsample_layers)])
        self.dropout = nn.Dropout(cfg.dropout)
        self.stack = TransformerStack(cfg.acoustic_layers, d, cfg.n_heads, cfg.ffn_mult * d, cfg.dropout)
        self.d_model = d

    def forward(self, frames: torch.Tensor, frame_mask: torch.Tensor) -> EncoderOutput:
        if frames.dim() != 3 or frames.shape[:2] != frame_mask.shape:
            raise ShapeError(f"frames {tuple(frames.shape)} and mask {tuple(frame_mask.shape)} do not line up")
        lengths = frame_mask.sum(dim=1)
        if frames.shape[1] == 0 or bool((lengths == 0).any()):
            raise EmptyInputError("Acoustic encoder received a sequence without frames.")

        pad = ~frame_mask.unsqueeze(-1)
        x = self.input_proj(frames.masked_fill(pad, 0.0)).masked_fill(pad, 0.0)
        for conv in self.subsample:
            x = F.gelu(conv(x.transpose(1, 2))).transpose(1, 2)
            lengths = torch.div(lengths + 1, 2, rounding_mode='floor')
            mask = torch.arange(x.shape[1], device=x.device).unsqueeze(0) < lengths.unsqueeze(1)
            x = x.masked_fill(~mask.unsqueeze(-1), 0.0)
        if not self.subsample:
            mask = frame_mask

        x = x + sinusoidal_positions(x.shape[1], self.d_model, x.dtype, x.device)
        return self.stack(EncoderOutput(self.dropout(x), mask))


class TextualEncoder(nn.Module):
    """Shared semantic encoder over embedded text (MT path) or acoustic-encoder output (ST path)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.d_model = cfg.d_model
        self.stack = TransformerStack(cfg.textual_layers, cfg.d_model, cfg.n_heads, cfg.ffn_mult * cfg.d_model, cfg.dropout)

    def forward(self, enc_in: EncoderOutput) -> EncoderOutput:
        if enc_in.reps.shape[-1] != self.d_model:
            raise ShapeError(f"Textual encoder expects dim {self.d_model}, got {enc_in.reps.shape[-1]}")
        if enc_in.reps.shape[1] == 0:
            raise EmptyInputError("Textual encoder received an empty sequence.")
        return self.stack(enc_in)


class Decoder(nn.Module):
    """Autoregressive Transformer decoder; the output projection is tied to the embedding table."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.layers = nn.ModuleList([TransformerLayer(d, cfg.n_heads, cfg.ffn_mult * d, cfg.dropout, cross=True)
                                     for _ in range(cfg.decoder_layers)])
        self.norm = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)
        self.d_model = d

    def forward(self, encoder_out: EncoderOutput, prev_tokens: torch.Tensor, embedding: nn.Embedding) -> torch.Tensor:
        if prev_tokens.dim() != 2 or prev_tokens.shape[1] == 0:
            raise ShapeError(f"prev_tokens must be [B, L] with L >= 1, got {tuple(prev_tokens.shape)}")
        length = prev_tokens.shape[1]
        x = embedding(prev_tokens) * math.sqrt(self.d_model)
        x = self.dropout(x + sinusoidal_positions(length, self.d_model, x.dtype, x.device))
        # Right padding plus causality: a valid position never attends to padding.
        self_mask = torch.ones(prev_tokens.shape, dtype=torch.bool, device=prev_tokens.device)
        memory = EncoderOutput(encoder_out.reps.masked_fill(~encoder_out.mask.unsqueeze(-1), 0.0), encoder_out.mask)
        for layer in self.layers:
            x = layer(x, self_mask, causal=True, memory=memory)
        return F.linear(self.norm(x), embedding.weight)


class ModalDiscriminator(nn.Module):
    """
    Modality classifier over mean-pooled sequences.

    `n_layers` hidden layers of width `hidden` with LeakyReLU, then a 1-unit
    output and a sigmoid. The output is the probability that the sequence is text.
    """

    def __init__(self, d_model: int, hidden: int, n_layers: int = 3):
        super().__init__()
        dims = [d_model] + [hidden] * n_layers
        self.hidden = nn.ModuleList([nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers)])
        self.output = nn.Linear(dims[-1], 1)

    def classify_pooled(self, pooled: torch.Tensor, frozen: bool = False) -> torch.Tensor:
        """
        Probabilities for pooled representations [B, d] -> [B].

        With `frozen=True` the parameters enter the graph as constants, so a
        loss computed from the result cannot update the discriminator.
        """
        x = pooled
        for layer in self.hidden:
            x = F.leaky_relu(self._linear(layer, x, frozen), negative_slope=0.01)
        return torch.sigmoid(self._linear(self.output, x, frozen)).squeeze(-1)

    def forward(self, h: EncoderOutput, frozen: bool = False) -> torch.Tensor:
        return self.classify_pooled(masked_mean(h.reps, h.mask), frozen=frozen)

    @staticmethod
    def _linear(layer: nn.Linear, x: torch.Tensor, frozen: bool) -> torch.Tensor:
        if frozen:
            return F.linear(x, layer.weight.detach(), layer.bias.detach())
        return layer(x)


class SAlignModel(nn.Module):
    """
    The full model: embedding, acoustic encoder + CTC head, textual encoder,
    decoder and modal discriminator, with named parameter groups for
    gradient partitioning.
    """

    GROUPS = ('embedding', 'acoustic', 'ctc', 'textual', 'decoder', 'discriminator')
    ENCODER_GROUPS = ('embedding', 'acoustic', 'ctc', 'textual')

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size is None or cfg.d_feat is None:
            raise ShapeError("ModelConfig.vocab_size and d_feat must be resolved before building a model.")
        self.cfg = cfg
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.acoustic = AcousticEncoder(cfg)
        self.ctc = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.textual = TextualEncoder(cfg)
        self.decoder = Decoder(cfg)
        self.discriminator = ModalDiscriminator(cfg.d_model, cfg.disc_hidden, cfg.disc_layers)
        self.text_dropout = nn.Dropout(cfg.dropout)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """Scaled-uniform init for projections, normal(0, d^-0.5) for the tied embedding."""
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv1d)):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        nn.init.normal_(self.embedding.weight, mean=0.0, std=self.cfg.d_model ** -0.5)

    # --- Forward pieces ---

    def token_embedding(self, tokens: torch.Tensor) -> torch.Tensor:
        """Scaled embedding rows, the representation text enters the textual encoder with."""
        return self.embedding(tokens) * math.sqrt(self.cfg.d_model)

    def embed_text(self, tokens: torch.Tensor, mask: torch.Tensor) -> EncoderOutput:
        x = self.token_embedding(tokens)
        x = x + sinusoidal_positions(tokens.shape[1], self.cfg.d_model, x.dtype, x.device)
        return EncoderOutput(self.text_dropout(x).masked_fill(~mask.unsqueeze(-1), 0.0), mask)

    def with_positions(self, enc: EncoderOutput) -> EncoderOutput:
        """Adds positions to an already-embedded sequence (used for noised MT sequences)."""
        x = enc.reps + sinusoidal_positions(enc.reps.shape[1], self.cfg.d_model, enc.reps.dtype, enc.reps.device)
        return EncoderOutput(x.masked_fill(~enc.mask.unsqueeze(-1), 0.0), enc.mask)

    def acoustic_encode(self, frames: torch.Tensor, frame_mask: torch.Tensor) -> EncoderOutput:
        return self.acoustic(frames, frame_mask)

    def ctc_log_probs(self, h_aenc: EncoderOutput) -> torch.Tensor:
        return torch.log_softmax(self.ctc(h_aenc.reps), dim=-1)

    def textual_encode(self, enc_in: EncoderOutput) -> EncoderOutput:
        return self.textual(enc_in)

    def encode_speech(self, frames: torch.Tensor, frame_mask: torch.Tensor) -> Tuple[EncoderOutput, EncoderOutput, torch.Tensor]:
        """Returns (A-enc output, h_st, CTC log-probabilities)."""
        h_aenc = self.acoustic_encode(frames, frame_mask)
        return h_aenc, self.textual_encode(h_aenc), self.ctc_log_probs(h_aenc)

    def encode_text(self, tokens: torch.Tensor, mask: torch.Tensor) -> EncoderOutput:
        """Returns h_mt."""
        return self.textual_encode(self.embed_text(tokens, mask))

    def decoder_forward(self, encoder_out: EncoderOutput, prev_tokens: torch.Tensor) -> torch.Tensor:
        return self.decoder(encoder_out, prev_tokens, self.embedding)

    def discriminate(self, h: EncoderOutput, frozen: bool = False) -> torch.Tensor:
        return self.discriminator(h, frozen=frozen)

    # --- Parameter bookkeeping ---

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        return {name: list(getattr(self, name).parameters()) for name in self.GROUPS}

    def encoder_parameters(self) -> List[nn.Parameter]:
        groups = self.parameter_groups()
        return [p for name in self.ENCODER_GROUPS for p in groups[name]]

    def discriminator_parameters(self) -> List[nn.Parameter]:
        return list(self.discriminator.parameters())

    def mt_parameters(self) -> List[nn.Parameter]:
        """Parameters trained by MT pre-training: embedding, textual encoder, decoder."""
        return list(self.embedding.parameters()) + list(self.textual.parameters()) + list(self.decoder.parameters())

    def parameter_report(self) -> Dict[str, int]:
        report = {name: sum(p.numel() for p in params) for name, params in self.parameter_groups().items()}
        report['total'] = sum(p.numel() for p in self.parameters())
        return report

    def fingerprint(self) -> str:
        return content_hash(asdict(self.cfg))


def expected_parameter_count(cfg: ModelConfig) -> Dict[str, int]:
    """Closed-form parameter counts per group; must agree with SAlignModel.parameter_report()."""
    d, v, f = cfg.d_model, cfg.vocab_size, cfg.ffn_mult * cfg.d_model
    attn = 4 * (d * d + d)
    norm = 2 * d
    ffn = d * f + f + f * d + d
    enc_layer = attn + norm + ffn + norm
    dec_layer = enc_layer + attn + norm
    proj = cfg.d_feat * d + d if (cfg.input_projection or cfg.d_feat != d) else 0
    conv = cfg.subsample_layers * (d * d * 3 + d)
    disc_dims = [d] + [cfg.disc_hidden] * cfg.disc_layers
    disc = sum(disc_dims[i] * disc_dims[i + 1] + disc_dims[i + 1] for i in range(cfg.disc_layers)) + disc_dims[-1] + 1
    report = {
        'embedding': v * d,
        'acoustic': proj + conv + cfg.acoustic_layers * enc_layer + norm,
        'ctc': d * v + v,
        'textual': cfg.textual_layers * enc_layer + norm,
        'decoder': cfg.decoder_layers * dec_layer + norm,
        'discriminator': disc,
    }
    report['total'] = sum(report.values())
    return report


# =============================================================================
# Checkpoints
# =============================================================================

def checkpoint_dict(model: SAlignModel, extra: Optional[Dict] = None) -> Dict:
    """Parameters (float32, canonical state-dict order) with the config fingerprint."""
    state = {name: tensor.detach().to(torch.float32).cpu().clone() for name, tensor in model.state_dict().items()}
    return {
        'fingerprint': model.fingerprint(),
        'model_config': asdict(model.cfg),
        'param_names': list(state),
        'state_dict': state,
        'extra': extra or {},
    }


def save_checkpoint(model_or_ckpt: Union[SAlignModel, Dict], path: Union[str, Path],
                    extra: Optional[Dict] = None) -> Path:
    """Writes a model (or an already-built checkpoint dict) to `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, dict) else checkpoint_dict(model_or_ckpt, extra)
    torch.save(ckpt, path)
    logger.debug(f"Saved checkpoint to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Dict:
    path = Path(path)
    if not path.exists():
        raise IncompatibleCheckpointError(f"Checkpoint not found: {path}")
    return torch.load(path, map_location='cpu', weights_only=False)


def load_checkpoint(model: SAlignModel, source: Union[str, Path, Dict]) -> Dict:
    """
    Loads a checkpoint (path or already-read dict) into `model`.

    Raises:
        IncompatibleCheckpointError: If the checkpoint's fingerprint differs from the model's.

    Returns:
        The checkpoint's `extra` dictionary.
    """
    ckpt = source if isinstance(source, dict) else read_checkpoint(source)
    if ckpt['fingerprint'] != model.fingerprint():
        raise IncompatibleCheckpointError(
            f"Checkpoint fingerprint {ckpt['fingerprint'][:12]} does not match model {model.fingerprint()[:12]}")
    dtype = next(model.parameters()).dtype
    model.load_state_dict({k: v.to(dtype) for k, v in ckpt['state_dict'].items()})
    return ckpt.get('extra', {})
