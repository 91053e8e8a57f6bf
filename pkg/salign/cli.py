"""
Command surface of the S-Align Lab.

`run` resolves an experiment config, executes one command and returns a
process exit code. Each command writes into its own directory under the
config's `output_dir`, which always holds `resolved_config.json` and
`run_info.json` next to the command's artifacts:

    gen-data      train/valid/test manifests, frame files and vocab.txt
    pretrain-mt   pretrain_mt.pt and pretrain_log.jsonl
    train         checkpoints/, checkpoint_last.pt, checkpoint_avg.pt, train_log.jsonl
    evaluate      metrics_st.json, metrics_mt.json, metrics_asr.json
    diagnose      modality_report.json, scatter.csv, curves.csv (+ PNGs with plot)
    ablate        ablation_results.csv and .json, one directory per variant

A failed command removes the directory it created.
"""

import logging
import math
import shutil
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import sys
sys.path.append(str(Path(__file__).parent.parent))
from config import (CACHE_DIR, CACHE_EXPIRY_HOURS, EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_FAILURE,
                    SALIGN_VERSION)

from .ablation import AblationRunner
from .cache import CacheManager
from .corpora import SPLITS, load_splits
from .diagnostics import curves_frame, diagnose_model, export_curves, export_scatter, loss_reversal
from .errors import ConfigurationError
from .evalkit import evaluate_model
from .experiment import ExperimentConfig, load_experiment
from .exporter import Exporter
from .network import SAlignModel, load_checkpoint, read_checkpoint
from .synthdata import Vocabulary, write_manifest
from .trainer import TrainLog, Trainer
from .utils import content_hash, hash_files, seed_everything

logger = logging.getLogger(__name__)

COMMANDS = ('gen-data', 'pretrain-mt', 'train', 'evaluate', 'diagnose', 'ablate')

PRETRAINED_NAME = 'pretrain_mt.pt'
AVERAGED_NAME = 'checkpoint_avg.pt'
TRAIN_LOG_NAME = 'train_log.jsonl'


class CommandContext:
    """Everything a command needs: the resolved config, its directory and the shared helpers."""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.out_dir = self.root / command
        self.exporter = Exporter(self.out_dir)
        self.cache_manager = CacheManager(CACHE_DIR, CACHE_EXPIRY_HOURS)
        self.cache_manager.clear_expired()
        self.inputs: List[Path] = []
        self.logger = logging.getLogger("CommandContext")

    def splits(self):
        train, valid, test = load_splits(self.cfg, self.cache_manager)
        if self.cfg.data.manifest_dir:
            self.inputs.extend(Path(self.cfg.data.manifest_dir) / f"{name}.tsv" for name in SPLITS)
        return {'train': train, 'valid': valid, 'test': test}

    def find_checkpoint(self, explicit: str, default: Path) -> Optional[Path]:
        """An explicitly configured checkpoint, else `default` when it exists."""
        if explicit:
            return Path(explicit)
        return default if default.exists() else None

    def load_model(self, checkpoint: Optional[Path]) -> SAlignModel:
        """A model from `checkpoint`, or a freshly seeded one when there is none."""
        seed_everything(self.cfg.train.seed)
        model = SAlignModel(self.cfg.model)
        if checkpoint is None:
            self.logger.warning("No checkpoint found; using an untrained model")
            return model
        load_checkpoint(model, read_checkpoint(checkpoint))
        self.inputs.append(checkpoint)
        self.logger.info(f"Loaded checkpoint {checkpoint}")
        return model

    def write_run_info(self) -> None:
        files = [p for p in self.inputs if p.exists()]
        input_hash = content_hash({'config': self.cfg.fingerprint(), 'files': hash_files(files) if files else None})
        self.cfg.save(self.out_dir / 'resolved_config.json')
        self.exporter.export({
            'command': self.command,
            'profile': self.cfg.profile,
            'seed': self.cfg.train.seed,
            'data_seed': self.cfg.data.seed,
            'fingerprint': self.cfg.fingerprint(),
            'input_hash': input_hash,
            'inputs': [str(p) for p in files],
            'version': SALIGN_VERSION,
        }, 'run_info', format='json')


# --- Commands ---

def cmd_gen_data(ctx: CommandContext) -> None:
    splits = ctx.splits()
    vocab = Vocabulary.synthetic(ctx.cfg.data.vocab_size)
    for name, triples in splits.items():
        write_manifest(triples, ctx.out_dir, vocab, name=f"{name}.tsv")


def cmd_pretrain_mt(ctx: CommandContext) -> None:
    train = ctx.splits()['train']
    Trainer(ctx.cfg, out_dir=ctx.out_dir).pretrain_mt(train)


def cmd_train(ctx: CommandContext) -> None:
    splits = ctx.splits()
    init = ctx.find_checkpoint(ctx.cfg.train.init_checkpoint, ctx.root / 'pretrain-mt' / PRETRAINED_NAME)
    if init is None:
        logger.warning("No pre-trained MT checkpoint found; fine-tuning from scratch")
    else:
        ctx.inputs.append(init)
    trainer = Trainer(ctx.cfg, out_dir=ctx.out_dir)
    trainer.finetune(splits['train'], valid_dataset=splits['valid'],
                     init_checkpoint=read_checkpoint(init) if init else None)


def cmd_evaluate(ctx: CommandContext) -> None:
    ev = ctx.cfg.eval
    dataset = ctx.splits()[ev.split]
    checkpoint = ctx.find_checkpoint(ev.checkpoint, ctx.root / 'train' / AVERAGED_NAME)
    model = ctx.load_model(checkpoint)
    reports = evaluate_model(model, dataset, beam=ev.beam, max_len=ev.max_len, length_penalty=ev.length_penalty,
                             checkpoint=str(checkpoint or ''), max_frames=ctx.cfg.train.max_frames)
    for task, report in reports.items():
        ctx.exporter.export(report.to_dict(), f"metrics_{task}", format='json')


def cmd_diagnose(ctx: CommandContext) -> None:
    dg = ctx.cfg.diagnostics
    splits = ctx.splits()
    model = ctx.load_model(ctx.find_checkpoint(ctx.cfg.eval.checkpoint, ctx.root / 'train' / AVERAGED_NAME))
    report, own_accuracy = diagnose_model(model, splits[dg.fit_split], splits[dg.split], ctx.cfg)
    summary = report.to_dict()
    summary['model_discriminator_accuracy'] = own_accuracy

    log_path = ctx.root / 'train' / TRAIN_LOG_NAME
    if log_path.exists():
        log = TrainLog.from_jsonl(log_path)
        ctx.inputs.append(log_path)
        export_curves(log, ctx.out_dir / 'curves.csv', plot=dg.plot)
        rho = loss_reversal(curves_frame(log))
        summary['loss_reversal_spearman'] = None if math.isnan(rho) else rho
    else:
        logger.info(f"No training log at {log_path}; skipping loss curves")

    export_scatter(report, ctx.out_dir / 'scatter.csv', plot=dg.plot)
    ctx.exporter.export(summary, 'modality_report', format='json')


def cmd_ablate(ctx: CommandContext) -> None:
    runner = AblationRunner(ctx.cfg, ctx.out_dir, ctx.cache_manager)
    runner.run()
    summary = runner.get_last_run_summary()
    if summary['failed']:
        logger.warning(f"Failed variants: {', '.join(summary['failed'])}")


HANDLERS: Dict[str, Callable[[CommandContext], None]] = {
    'gen-data': cmd_gen_data,
    'pretrain-mt': cmd_pretrain_mt,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'diagnose': cmd_diagnose,
    'ablate': cmd_ablate,
}


def run(command: str, config_path: Optional[str] = None, overrides: Sequence[str] = (),
        profile: Optional[str] = None, plot: Optional[bool] = None) -> int:
    """
    Runs one command and returns its exit code.

    Args:
        command: One of COMMANDS.
        config_path: Optional JSON config file.
        overrides: Dotted `section.key=value` flags.
        profile: Profile name, overriding the one in the config file.
        plot: When given, overrides `diagnostics.plot`.

    Returns:
        0 on success, 2 for configuration errors, 3 for runtime failures.
    """
    if command not in HANDLERS:
        logger.error(f"Unknown command '{command}'. Options: {', '.join(COMMANDS)}")
        return EXIT_CONFIG_ERROR
    try:
        cfg = load_experiment(config_path, overrides, profile)
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    if plot is not None:
        cfg.diagnostics.plot = plot

    ctx = CommandContext(command, cfg)
    created = not ctx.out_dir.exists()
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"--- {command} (profile {cfg.profile}, seed {cfg.train.seed}) -> {ctx.out_dir} ---")
    try:
        HANDLERS[command](ctx)
        ctx.write_run_info()
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        _cleanup(ctx.out_dir, created)
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.error(f"Command '{command}' failed: {e}", exc_info=True)
        _cleanup(ctx.out_dir, created)
        return EXIT_RUNTIME_FAILURE
    logger.info(f"--- {command} complete ---")
    return EXIT_OK


def _cleanup(out_dir: Path, created: bool) -> None:
    if created and out_dir.exists():
        shutil.rmtree(out_dir, ignore_errors=True)
        logger.info(f"Removed partial outputs in {out_dir}")
