"""
Progressive training for the S-Align Lab.

Training runs in two phases. MT pre-training fits the embedding, the
textual encoder and the decoder on text pairs. Multi-task fine-tuning then
trains everything on ASR (CTC), MT, ST and the adversarial terms, with the
gradient partition enforced by construction:

- the discriminator loss is computed on detached representations, so it only
  reaches discriminator parameters;
- the generator losses go through the discriminator with frozen weights, so
  they only reach encoder-side parameters.

Both phases are deterministic given the config: batches, dropout and mix-up
randomness are all derived from (seed, step), which also makes resuming from
a checkpoint reproduce the losses of an uninterrupted run.
"""

import copy
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import pandas as pd
import torch
from tqdm import tqdm

from .continuity import ST_MIX, MixedSequenceBuilder, MixOutcome
from .errors import (ConfigurationError, DegenerateBatchError, DivergenceError,
                     IncompatibleCheckpointError, PartitionViolationError)
from .experiment import ExperimentConfig
from .exporter import Exporter
from .network import (EncoderOutput, SAlignModel, checkpoint_dict, load_checkpoint, masked_mean,
                      read_checkpoint, save_checkpoint)
from .objectives import (C_U, AdversarialBatchLabel, LossBreakdown, contrastive_loss, ce_loss, ctc_loss_batch,
                         discriminator_loss, generator_loss, total_loss, with_total)
from .synthdata import Batch, Triple, make_batches
from .utils import derive_rng, seed_everything

# RNG stream keys, so the phases and the mix-up draws never share a stream.
PRETRAIN_STREAM = 1
FINETUNE_STREAM = 2
MIX_STREAM = 3
ST_DATA_STREAM = 4
MT_DATA_STREAM = 5


class TrainLog:
    """
    Append-only per-step training record.

    With a path, every record is written through the Exporter as one JSON
    line as soon as it is appended. Reopening with `resume_after=s` keeps the
    file's records up to step s and drops any later ones, so a resumed run
    continues an interrupted log without duplicate steps.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, append: bool = False,
                 resume_after: Optional[int] = None):
        self.records: List[Dict[str, Any]] = []
        self.path = Path(path) if path else None
        self.exporter = Exporter(self.path.parent) if self.path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append or not self.path.exists():
                self.exporter.to_jsonl([], self.path)
            elif resume_after is not None:
                kept = [r for r in _read_jsonl(self.path) if r['step'] <= resume_after]
                self.exporter.to_jsonl(kept, self.path)

    def append(self, record: Dict[str, Any]) -> None:
        if self.records and record['step'] <= self.records[-1]['step']:
            raise ValueError(f"TrainLog steps must increase: {record['step']} after {self.records[-1]['step']}")
        self.records.append(record)
        if self.path:
            self.exporter.to_jsonl([record], self.path, append=True)

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> 'TrainLog':
        log = cls()
        for record in _read_jsonl(path):
            log.append(record)
        return log

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        return iter(self.records)


def _read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding='utf-8').splitlines() if line.strip()]


@dataclass
class TrainResult:
    model: SAlignModel
    checkpoint: Dict
    log: TrainLog
    checkpoint_path: Optional[Path] = None
    last_checkpoint: Optional[Dict] = None
    validation: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class StepOutputs:
    """Everything a fine-tuning step computes before the generator terms."""
    h_st: EncoderOutput
    h_mt: EncoderOutput
    asr: torch.Tensor
    st: torch.Tensor
    mt: torch.Tensor
    contrastive: Union[float, torch.Tensor]
    d_st: torch.Tensor
    d_mt: torch.Tensor
    disc: torch.Tensor
    mix: Optional[MixOutcome] = None
    h_mix: Optional[EncoderOutput] = None

    @property
    def accuracy(self) -> float:
        correct = int((self.d_st < 0.5).sum()) + int((self.d_mt >= 0.5).sum())
        return correct / (self.d_st.numel() + self.d_mt.numel())


class BatchStream:
    """
    Endless deterministic batch sequence: epoch e is the dataset packed with a
    shuffle seed derived from (seed, e). Any step can be looked up directly.
    """

    def __init__(self, dataset: Sequence[Triple], max_frames: int, seed: int, stream: int,
                 dtype: torch.dtype = torch.float32):
        if not dataset:
            raise ConfigurationError("Cannot train on an empty dataset.")
        self.dataset = dataset
        self.max_frames = max_frames
        self.seed = seed
        self.stream = stream
        self.dtype = dtype
        self._epoch_sizes: List[int] = []
        self._current = (-1, [])

    def _epoch(self, epoch: int) -> List[Batch]:
        if self._current[0] != epoch:
            shuffle_seed = int(derive_rng(self.seed, self.stream, epoch).integers(2 ** 31))
            batches = make_batches(self.dataset, self.max_frames, shuffle_seed, dtype=self.dtype)
            self._current = (epoch, batches)
            if epoch == len(self._epoch_sizes):
                self._epoch_sizes.append(len(batches))
        return self._current[1]

    def batch_at(self, step: int) -> Batch:
        """Batch used at 1-based `step`."""
        position, epoch = step - 1, 0
        while True:
            size = self._epoch_sizes[epoch] if epoch < len(self._epoch_sizes) else len(self._epoch(epoch))
            if position < size:
                return self._epoch(epoch)[position]
            position -= size
            epoch += 1


class Trainer:
    """
    Runs MT pre-training and multi-task fine-tuning for one experiment config.
    """

    def __init__(self, cfg: ExperimentConfig, model: Optional[SAlignModel] = None,
                 dtype: torch.dtype = torch.float32, out_dir: Optional[Union[str, Path]] = None):
        self.cfg = cfg
        self.dtype = dtype
        self.logger = logging.getLogger("Trainer")
        if model is None:
            seed_everything(cfg.train.seed)
            model = SAlignModel(cfg.model).to(dtype)
        self.model = model
        self.out_dir = Path(out_dir) if out_dir else None
        self.mixer = MixedSequenceBuilder(model, cfg.continuity)
        self.checkpoints: List[Dict] = []

    # --- Schedule and bookkeeping ---

    def lr_at(self, step: int) -> float:
        """Inverse-square-root schedule with linear warmup; peaks at the configured rate."""
        lr, warmup = self.cfg.train.learning_rate, self.cfg.train.warmup_steps
        if warmup <= 0:
            return lr
        return lr * min(step / warmup, math.sqrt(warmup / step))

    def _optimizer(self, params: List[torch.nn.Parameter]) -> torch.optim.Optimizer:
        return torch.optim.Adam(params, lr=self.cfg.train.learning_rate, betas=(0.9, 0.98), eps=1e-9)

    def _set_lr(self, step: int, *optimizers: torch.optim.Optimizer) -> float:
        lr = self.lr_at(step)
        for opt in optimizers:
            for group in opt.param_groups:
                group['lr'] = lr
        return lr

    def _seed_step(self, stream: int, step: int) -> None:
        torch.manual_seed(int(derive_rng(self.cfg.train.seed, stream, step).integers(2 ** 31)))

    def _check_finite(self, step: int, values: Dict[str, Any]) -> None:
        for name, value in values.items():
            number = value.item() if isinstance(value, torch.Tensor) else float(value)
            if not math.isfinite(number):
                raise DivergenceError(f"Non-finite {name} loss ({number}) at step {step}")

    def _path(self, name: str) -> Optional[Path]:
        return self.out_dir / name if self.out_dir else None

    def _progress(self, start: int, stop: int, desc: str):
        return tqdm(range(start, stop + 1), desc=desc, unit="step", file=sys.stdout, disable=None, leave=False)

    # --- Phase 1: MT pre-training ---

    def pretrain_mt(self, dataset: Sequence[Triple], steps: Optional[int] = None,
                    resume: Optional[Union[str, Path, Dict]] = None) -> TrainResult:
        """
        Trains embedding, textual encoder and decoder on the MT task only.

        The acoustic encoder, CTC head and discriminator are left untouched.
        """
        steps = self.cfg.train.pretrain_steps if steps is None else steps
        optimizer = self._optimizer(self.model.mt_parameters())
        start = 1
        if resume is not None:
            extra = load_checkpoint(self.model, resume)
            optimizer.load_state_dict(extra['optimizer'])
            start = extra['step'] + 1
            self.logger.info(f"Resuming MT pre-training at step {start}")

        stream = BatchStream(dataset, self.cfg.train.max_frames, self.cfg.train.seed, MT_DATA_STREAM, self.dtype)
        log = TrainLog(self._path('pretrain_log.jsonl'), append=resume is not None)
        self.logger.info(f"MT pre-training for {steps} steps on {len(dataset)} pairs")
        self.model.train()

        for step in self._progress(start, steps, "pretrain-mt"):
            self._seed_step(PRETRAIN_STREAM, step)
            lr = self._set_lr(step, optimizer)
            batch = stream.batch_at(step)
            h_mt = self.model.encode_text(batch.src, batch.src_mask)
            mt = ce_loss(self.model.decoder_forward(h_mt, batch.tgt_in), batch.tgt_out, batch.tgt_mask)
            self._check_finite(step, {'mt': mt})

            optimizer.zero_grad(set_to_none=True)
            mt.backward()
            optimizer.step()

            record = {'step': step, 'phase': 'pretrain', 'lr': lr, 'acc': None,
                      **LossBreakdown(mt=mt.item(), total=mt.item()).to_record()}
            log.append(record)
            self.logger.debug(f"pretrain step {step}: {record}")
            if step % self.cfg.train.log_every == 0:
                self.logger.info(f"pretrain step {step}/{steps}: mt={record['mt']:.4f} lr={lr:.2e}")

        ckpt = checkpoint_dict(self.model, extra={'phase': 'pretrain', 'step': steps,
                                                  'optimizer': optimizer.state_dict()})
        path = save_checkpoint(ckpt, self._path('pretrain_mt.pt')) if self.out_dir else None
        return TrainResult(model=self.model, checkpoint=ckpt, log=log, checkpoint_path=path)

    # --- Phase 2: multi-task fine-tuning ---

    def forward_pass(self, step: int, st: Batch, mt: Batch) -> StepOutputs:
        """
        Task losses, discriminator outputs on detached representations and,
        when enabled, the mixed sequence. The mix is computed last under a forked
        torch RNG so it cannot change anything the decoder sees.
        """
        model, obj = self.model, self.cfg.objectives
        h_aenc, h_st, ctc_lp = model.encode_speech(st.frames, st.frame_mask)
        asr, _ = ctc_loss_batch(ctc_lp, h_aenc.lengths, st.src, st.src_mask, ids=st.ids)
        st_loss = ce_loss(model.decoder_forward(h_st, st.tgt_in), st.tgt_out, st.tgt_mask)
        h_mt = model.encode_text(mt.src, mt.src_mask)
        mt_loss = ce_loss(model.decoder_forward(h_mt, mt.tgt_in), mt.tgt_out, mt.tgt_mask)

        contrastive = 0.0
        if obj.contrastive_weight > 0:
            contrastive = self._contrastive(st, h_aenc, h_st)

        d_st = model.discriminate(h_st.detach())
        d_mt = model.discriminate(h_mt.detach())
        mix, h_mix, d_mix = None, None, None
        if self.cfg.continuity.enabled:
            mix, h_mix, d_mix = self._mixed(step, h_aenc, ctc_lp, st, mt)
        target = None if mix is None else AdversarialBatchLabel.mixed(mix.labels, len(mix.labels), mix.branch)
        disc = discriminator_loss(d_st, d_mt, obj.eps, d_mix, target)
        return StepOutputs(h_st=h_st, h_mt=h_mt, asr=asr, st=st_loss, mt=mt_loss, contrastive=contrastive,
                           d_st=d_st, d_mt=d_mt, disc=disc, mix=mix, h_mix=h_mix)

    def _contrastive(self, st: Batch, h_aenc: EncoderOutput, h_st: EncoderOutput):
        """Hard alignment between each utterance and its own transcription."""
        obj = self.cfg.objectives
        if len(st) < 2:
            self.logger.debug("Single-example batch; contrastive term skipped")
            return 0.0
        if obj.contrastive_level == 'low':
            emb = self.model.embed_text(st.src, st.src_mask)
            speech, text = masked_mean(h_aenc.reps, h_aenc.mask), masked_mean(emb.reps, emb.mask)
        else:
            h_txt = self.model.encode_text(st.src, st.src_mask)
            speech, text = masked_mean(h_st.reps, h_st.mask), masked_mean(h_txt.reps, h_txt.mask)
        try:
            return contrastive_loss(speech, text, obj.contrastive_temperature)
        except DegenerateBatchError:
            return 0.0

    def _mixed(self, step: int, h_aenc: EncoderOutput, ctc_lp: torch.Tensor, st: Batch, mt: Batch):
        rng = derive_rng(self.cfg.train.seed, MIX_STREAM, step)
        with torch.random.fork_rng(devices=[]):
            mix = self.mixer.build(rng, h_aenc, ctc_lp, st.src, st.src_mask, mt.src, mt.src_mask)
            if self.cfg.continuity.mixed_generator_loss:
                h_mix = self.model.textual_encode(mix.sequence)
            else:
                with torch.no_grad():
                    h_mix = self.model.textual_encode(mix.sequence)
        d_mix = self.model.discriminate(h_mix.detach())
        return mix, h_mix, d_mix

    def generator_terms(self, out: StepOutputs):
        """
        Generator losses toward c_u through the frozen discriminator.

        With `mixed_generator_loss`, each mixed row adds its generator loss to
        the term of the branch that built it: ST mix-up rows to gen_st,
        noised MT rows to gen_mt.
        """
        eps = self.cfg.objectives.eps
        gen_st = generator_loss(self.model.discriminate(out.h_st, frozen=True), C_U, eps)
        gen_mt = generator_loss(self.model.discriminate(out.h_mt, frozen=True), C_U, eps)
        if self.cfg.continuity.mixed_generator_loss and out.h_mix is not None:
            d_mix = self.model.discriminate(out.h_mix, frozen=True)
            from_st = torch.tensor([b == ST_MIX for b in out.mix.branches], device=d_mix.device)
            if bool(from_st.any()):
                gen_st = gen_st + generator_loss(d_mix[from_st], C_U, eps)
            if bool((~from_st).any()):
                gen_mt = gen_mt + generator_loss(d_mix[~from_st], C_U, eps)
        return gen_st, gen_mt

    def loss_weights(self, step: int) -> Dict[str, float]:
        obj = self.cfg.objectives
        return {
            'w_asr': obj.w_asr if step <= self.cfg.train.asr_step_cap else 0.0,
            'w_mt': obj.w_mt,
            'w_st': obj.w_st,
            'lam': self.cfg.train.adv_weight,
            'w_contrastive': obj.contrastive_weight,
        }

    def audit_discriminator_loss(self, step: int, disc: torch.Tensor) -> None:
        """Raises unless ∂L_D is exactly zero for every non-discriminator parameter."""
        params = [p for name, p in self.model.named_parameters() if not name.startswith('discriminator.')]
        for grad in torch.autograd.grad(disc, params, retain_graph=True, allow_unused=True):
            if grad is not None and bool(grad.abs().max() > 0):
                raise PartitionViolationError(f"Discriminator loss reaches encoder parameters at step {step}")

    def audit_generator_loss(self, step: int, gen: torch.Tensor) -> None:
        """Raises unless ∂(L_G_st + L_G_mt) is exactly zero for every discriminator parameter."""
        if not isinstance(gen, torch.Tensor) or not gen.requires_grad:
            return
        params = self.model.discriminator_parameters()
        for grad in torch.autograd.grad(gen, params, retain_graph=True, allow_unused=True):
            if grad is not None and bool(grad.abs().max() > 0):
                raise PartitionViolationError(f"Generator loss reaches discriminator parameters at step {step}")

    def train_step(self, step: int, st: Batch, mt: Batch, gen_opt: torch.optim.Optimizer,
                   disc_opt: torch.optim.Optimizer) -> Dict[str, Any]:
        """One fine-tuning update. Returns the step's log record."""
        weights = self.loss_weights(step)
        alternating = self.cfg.train.adversarial_schedule == 'alternating'
        audit = self.cfg.train.audit_every > 0 and step % self.cfg.train.audit_every == 0

        out = self.forward_pass(step, st, mt)
        if audit:
            self.audit_discriminator_loss(step, out.disc)
        if alternating and weights['lam'] > 0:
            disc_opt.zero_grad(set_to_none=True)
            (weights['lam'] * out.disc).backward()
            disc_opt.step()

        gen_st, gen_mt = self.generator_terms(out)
        if audit:
            self.audit_generator_loss(step, gen_st + gen_mt)
        parts = with_total(LossBreakdown(asr=out.asr, mt=out.mt, st=out.st, disc=out.disc,
                                         gen_st=gen_st, gen_mt=gen_mt, contrastive=out.contrastive), **weights)
        total = parts.total
        self._check_finite(step, vars(parts))

        objective = total_loss(replace(parts, disc=0.0), **weights) if alternating else total
        gen_opt.zero_grad(set_to_none=True)
        if not alternating:
            disc_opt.zero_grad(set_to_none=True)
        if isinstance(objective, torch.Tensor) and objective.requires_grad:
            objective.backward()
        gen_opt.step()
        if not alternating:
            disc_opt.step()

        record = {'step': step, 'phase': 'finetune', 'acc': out.accuracy, 'asr_weight': weights['w_asr'],
                  **parts.to_record()}
        if out.mix is not None:
            record['mix_p'] = float(out.mix.labels.mean())
            record['mix_branch'] = out.mix.branch
        return record

    def validation_st_loss(self, dataset: Sequence[Triple]) -> float:
        """Mean per-sequence ST cross-entropy over `dataset` in eval mode."""
        was_training = self.model.training
        self.model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for batch in make_batches(dataset, self.cfg.train.max_frames, shuffle_seed=0, dtype=self.dtype):
                _, h_st, _ = self.model.encode_speech(batch.frames, batch.frame_mask)
                loss = ce_loss(self.model.decoder_forward(h_st, batch.tgt_in), batch.tgt_out, batch.tgt_mask)
                total += float(loss) * len(batch)
                count += len(batch)
        self.model.train(was_training)
        return total / count

    def _keep_checkpoint(self, ckpt: Dict) -> None:
        self.checkpoints.append(ckpt)
        self.checkpoints.sort(key=lambda c: (c['extra']['valid_st_loss'], c['extra']['step']))
        del self.checkpoints[self.cfg.train.keep_best_k:]

    def _resume_state(self, step: int, gen_opt: torch.optim.Optimizer,
                      disc_opt: torch.optim.Optimizer) -> Dict:
        """Everything `finetune(resume=...)` needs to continue after `step`."""
        return checkpoint_dict(self.model, extra={'phase': 'finetune', 'step': step,
                                                  'gen_optimizer': copy.deepcopy(gen_opt.state_dict()),
                                                  'disc_optimizer': copy.deepcopy(disc_opt.state_dict()),
                                                  'kept': list(self.checkpoints)})

    def finetune(self, st_dataset: Sequence[Triple], mt_dataset: Optional[Sequence[Triple]] = None,
                 valid_dataset: Optional[Sequence[Triple]] = None,
                 init_checkpoint: Optional[Union[str, Path, Dict]] = None,
                 steps: Optional[int] = None, resume: Optional[Union[str, Path, Dict]] = None) -> TrainResult:
        """
        Multi-task fine-tuning on ASR, MT, ST and the adversarial objective.

        Each step draws one ST batch (ASR, ST, speech side of the adversarial
        game) and one MT batch (MT, text side). Checkpoints carry the
        validation ST loss; the best `keep_best_k` are averaged at the end.
        Every checkpoint step also refreshes `checkpoint_last.pt`, so an
        interrupted run resumes from its latest checkpoint.
        """
        tc = self.cfg.train
        steps = tc.max_steps if steps is None else steps
        if init_checkpoint is not None and resume is None:
            load_checkpoint(self.model, init_checkpoint)
            self.logger.info("Initialized from pre-trained checkpoint")

        gen_params = [p for name, p in self.model.named_parameters() if not name.startswith('discriminator.')]
        gen_opt = self._optimizer(gen_params)
        disc_opt = self._optimizer(self.model.discriminator_parameters())
        start = 1
        if resume is not None:
            extra = load_checkpoint(self.model, resume)
            gen_opt.load_state_dict(extra['gen_optimizer'])
            disc_opt.load_state_dict(extra['disc_optimizer'])
            start = extra['step'] + 1
            self.checkpoints = list(extra.get('kept', []))
            self.logger.info(f"Resuming fine-tuning at step {start}")

        st_stream = BatchStream(st_dataset, tc.max_frames, tc.seed, ST_DATA_STREAM, self.dtype)
        mt_stream = BatchStream(mt_dataset or st_dataset, tc.max_frames, tc.seed, MT_DATA_STREAM, self.dtype)
        log = TrainLog(self._path('train_log.jsonl'), append=resume is not None, resume_after=start - 1)
        validation = []
        self.logger.info(f"Fine-tuning for {steps} steps on {len(st_dataset)} triples "
                         f"(lambda={tc.adv_weight}, continuity={self.cfg.continuity.enabled})")
        self.model.train()

        last = None
        for step in self._progress(start, steps, "finetune"):
            self._seed_step(FINETUNE_STREAM, step)
            lr = self._set_lr(step, gen_opt, disc_opt)
            record = self.train_step(step, st_stream.batch_at(step), mt_stream.batch_at(step), gen_opt, disc_opt)
            record['lr'] = lr
            log.append(record)
            self.logger.debug(f"finetune step {step}: {record}")
            if step % tc.log_every == 0:
                self.logger.info(f"step {step}/{steps}: st={record['st']:.4f} mt={record['mt']:.4f} "
                                 f"asr={record['asr']:.4f} disc={record['disc']:.4f} acc={record['acc']:.2f}")

            if step % tc.checkpoint_every == 0 or step == steps:
                valid_loss = self.validation_st_loss(valid_dataset) if valid_dataset else record['st']
                validation.append({'step': step, 'valid_st_loss': valid_loss})
                ckpt = checkpoint_dict(self.model, extra={'phase': 'finetune', 'step': step, 'valid_st_loss': valid_loss})
                self._keep_checkpoint(ckpt)
                last = self._resume_state(step, gen_opt, disc_opt)
                if self.out_dir:
                    save_checkpoint(ckpt, self.out_dir / 'checkpoints' / f"step_{step:06d}.pt")
                    save_checkpoint(last, self.out_dir / 'checkpoint_last.pt')
                self.logger.info(f"Checkpoint at step {step}: validation ST loss {valid_loss:.4f}")

        if last is None:
            last = self._resume_state(steps, gen_opt, disc_opt)
        if not self.checkpoints:
            raise ConfigurationError(f"No checkpoint to average: resumed at step {start} of {steps}")
        averaged = average_checkpoints(self.checkpoints, k=len(self.checkpoints))
        load_checkpoint(self.model, averaged)
        path = save_checkpoint(averaged, self.out_dir / 'checkpoint_avg.pt') if self.out_dir else None
        return TrainResult(model=self.model, checkpoint=averaged, log=log, checkpoint_path=path,
                           last_checkpoint=last, validation=validation)


def average_checkpoints(checkpoints: Sequence[Union[str, Path, Dict]], k: int,
                        metric: str = 'valid_st_loss') -> Dict:
    """
    Parameter-wise mean of the k checkpoints with the lowest `metric`.

    Checkpoints without the metric rank in the order given.

    Raises:
        ConfigurationError: If k is not in [1, len(checkpoints)].
        IncompatibleCheckpointError: If the checkpoints come from different configs.
    """
    if not 1 <= k <= len(checkpoints):
        raise ConfigurationError(f"Cannot average {k} of {len(checkpoints)} checkpoints")
    ckpts = [c if isinstance(c, dict) else read_checkpoint(c) for c in checkpoints]
    if len({c['fingerprint'] for c in ckpts}) > 1:
        raise IncompatibleCheckpointError("Checkpoints to average come from different model configs")

    ranked = sorted(range(len(ckpts)), key=lambda i: (ckpts[i].get('extra', {}).get(metric, math.inf), i))
    chosen = [ckpts[i] for i in ranked[:k]]
    state = {
        name: torch.stack([c['state_dict'][name].to(torch.float64) for c in chosen]).mean(dim=0).to(torch.float32)
        for name in chosen[0]['param_names']
    }
    return {
        'fingerprint': chosen[0]['fingerprint'],
        'model_config': chosen[0]['model_config'],
        'param_names': list(chosen[0]['param_names']),
        'state_dict': state,
        'extra': {'averaged_steps': [c.get('extra', {}).get('step') for c in chosen], 'k': k},
    }


def pretrain_mt(cfg: ExperimentConfig, dataset: Sequence[Triple], out_dir: Optional[Union[str, Path]] = None,
                dtype: torch.dtype = torch.float32) -> TrainResult:
    """MT pre-training with a freshly seeded model."""
    return Trainer(cfg, dtype=dtype, out_dir=out_dir).pretrain_mt(dataset)


def finetune_multitask(cfg: ExperimentConfig, st_dataset: Sequence[Triple],
                       mt_dataset: Optional[Sequence[Triple]] = None,
                       init_checkpoint: Optional[Union[str, Path, Dict]] = None,
                       valid_dataset: Optional[Sequence[Triple]] = None,
                       out_dir: Optional[Union[str, Path]] = None,
                       dtype: torch.dtype = torch.float32) -> TrainResult:
    """Multi-task fine-tuning from `init_checkpoint` (or from scratch)."""
    trainer = Trainer(cfg, dtype=dtype, out_dir=out_dir)
    return trainer.finetune(st_dataset, mt_dataset, valid_dataset=valid_dataset, init_checkpoint=init_checkpoint)
