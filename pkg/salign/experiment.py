"""
Typed experiment configuration.

An ExperimentConfig is resolved in layers: a named profile (`toy`, `smoke` or
`paper_default`, see config.py), then an optional JSON config file, then dotted
command-line overrides such as `train.lambda=0`, then the `SALIGN_SEED`
environment variable. Unknown sections or keys are rejected at every layer.
The fully resolved config serializes to JSON next to every run's outputs and
has a stable fingerprint.
"""

import copy
import json
import logging
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union, get_args, get_origin

import sys
sys.path.append(str(Path(__file__).parent.parent))
import config

from .errors import ConfigurationError
from .utils import content_hash

logger = logging.getLogger(__name__)

# Accepted spellings that map onto a field with a different Python name.
KEY_ALIASES = {
    ('train', 'lambda'): 'adv_weight',
}


@dataclass
class DataConfig:
    vocab_size: int = 40
    min_len: int = 3
    max_len: int = 8
    frames_per_token: List[int] = field(default_factory=lambda: [6, 10])
    blank_insert_rate: float = 0.2
    noise_std: float = 0.1
    d_feat: Optional[int] = None          # defaults to model.d_model
    prototype_scale: float = 1.0
    translation: str = "permute"          # permute | identity
    translation_offset: int = 1
    seed: int = 1234
    n_train: int = 2000
    n_valid: int = 100
    n_test: int = 100
    manifest_dir: str = ""                # when set, read {train,valid,test}.tsv from here


@dataclass
class ModelConfig:
    vocab_size: Optional[int] = None      # defaults to data.vocab_size
    d_feat: Optional[int] = None          # defaults to data.d_feat
    d_model: int = 64
    n_heads: int = 4
    ffn_mult: int = 4
    acoustic_layers: int = 2
    textual_layers: int = 2
    decoder_layers: int = 2
    subsample_layers: int = 2             # stride-2 convolutions, factor 2 ** n
    disc_hidden: int = 64
    disc_layers: int = 3
    dropout: float = 0.1
    input_projection: bool = False

    @property
    def subsample_factor(self) -> int:
        return 2 ** self.subsample_layers


@dataclass
class ObjectiveConfig:
    w_asr: float = 1.0
    w_mt: float = 0.5
    w_st: float = 1.0
    contrastive_weight: float = 0.0
    contrastive_level: str = "high"       # low | high
    contrastive_temperature: float = 0.05
    eps: float = 1e-7


@dataclass
class ContinuityConfig:
    enabled: bool = True
    tau: float = 0.1
    replacement_source: str = "ctc_argmax"   # ctc_argmax | gold
    per: str = "batch"                       # batch | example
    mixed_generator_loss: bool = False


@dataclass
class TrainConfig:
    max_steps: int = 2000
    pretrain_steps: int = 600
    learning_rate: float = 2e-4
    warmup_steps: int = 200
    adv_weight: float = 3.5
    asr_step_cap: int = 600
    checkpoint_every: int = 200
    keep_best_k: int = 5
    seed: int = 1
    max_frames: int = 4000
    adversarial_schedule: str = "joint"      # joint | alternating
    audit_every: int = 0
    log_every: int = 50
    init_checkpoint: str = ""


@dataclass
class EvalConfig:
    beam: int = 8
    max_len: int = 32
    length_penalty: float = 1.0
    checkpoint: str = ""
    split: str = "test"


@dataclass
class DiagnosticsConfig:
    plot: bool = False
    split: str = "test"
    fit_split: str = "train"              # where the post-hoc probe discriminator is trained
    probe_steps: int = 300
    probe_lr: float = 1e-2


@dataclass
class AblateConfig:
    variants: List[str] = field(default_factory=lambda: [
        "s_align", "no_enhanced", "no_adversarial", "s_align_low_halign", "s_align_high_halign"])
    seeds: List[int] = field(default_factory=lambda: [1])


SECTIONS = {
    'data': DataConfig,
    'model': ModelConfig,
    'objectives': ObjectiveConfig,
    'continuity': ContinuityConfig,
    'train': TrainConfig,
    'eval': EvalConfig,
    'diagnostics': DiagnosticsConfig,
    'ablate': AblateConfig,
}


@dataclass
class ExperimentConfig:
    """Every hyperparameter of a run, grouped by section."""
    profile: str = config.DEFAULT_PROFILE
    output_dir: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objectives: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    continuity: ContinuityConfig = field(default_factory=ContinuityConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    @classmethod
    def from_profile(cls, name: str) -> 'ExperimentConfig':
        if name not in config.PROFILES:
            raise ConfigurationError(f"Unknown profile '{name}'. Options: {sorted(config.PROFILES)}")
        cfg = cls(profile=name)
        cfg.update(config.PROFILES[name], source=f"profile '{name}'")
        return cfg

    def update(self, nested: Dict[str, Any], source: str = "config") -> None:
        """Applies a nested {section: {key: value}} mapping, rejecting unknown keys."""
        for section, values in nested.items():
            if section in ('profile', 'output_dir'):
                setattr(self, section, str(values))
                continue
            if section not in SECTIONS:
                raise ConfigurationError(f"Unknown config section '{section}' in {source}")
            if not isinstance(values, dict):
                raise ConfigurationError(f"Section '{section}' in {source} must be a mapping")
            for key, value in values.items():
                self.set(section, key, value, source=source)

    def set(self, section: str, key: str, value: Any, source: str = "override") -> None:
        """Sets one key, coercing the value to the field's declared type."""
        if section not in SECTIONS:
            raise ConfigurationError(f"Unknown config section '{section}' in {source}")
        key = KEY_ALIASES.get((section, key), key)
        target = getattr(self, section)
        known = {f.name: f for f in fields(target)}
        if key not in known:
            raise ConfigurationError(f"Unknown key '{section}.{key}' in {source}")
        setattr(target, key, _coerce(known[key].type, value, f"{section}.{key}"))

    def resolve(self) -> 'ExperimentConfig':
        """Fills values that default to other sections. Idempotent."""
        if self.data.d_feat is None:
            self.data.d_feat = self.model.d_model
        if self.model.vocab_size is None:
            self.model.vocab_size = self.data.vocab_size
        if self.model.d_feat is None:
            self.model.d_feat = self.data.d_feat
        if not self.output_dir:
            self.output_dir = config.DEFAULT_OUTPUT_DIR
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def fingerprint(self) -> str:
        """SHA-256 over the resolved config, excluding where outputs go."""
        payload = self.to_dict()
        payload.pop('output_dir', None)
        return content_hash(payload)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding='utf-8')

    def copy(self) -> 'ExperimentConfig':
        return copy.deepcopy(self)

    def with_overrides(self, overrides: Dict[str, Any]) -> 'ExperimentConfig':
        """Returns a copy with dotted-key overrides applied."""
        cfg = self.copy()
        for dotted, value in overrides.items():
            section, key = _split_dotted(dotted)
            cfg.set(section, key, value)
        return cfg


def _split_dotted(dotted: str) -> Tuple[str, str]:
    parts = dotted.split('.')
    if len(parts) != 2 or not all(parts):
        raise ConfigurationError(f"Override key '{dotted}' must look like section.key")
    return parts[0], parts[1]


def _coerce(annotation: Any, value: Any, name: str) -> Any:
    """Coerces a value to the field's annotated type. None is only accepted by Optional fields."""
    args = [a for a in get_args(annotation) if a is not type(None)]
    if get_origin(annotation) is Union:
        if value is None:
            return None
        annotation = args[0]
    if value is None:
        raise ConfigurationError(f"'{name}' must be set, got None")
    if annotation is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ('true', 'false'):
            return value.lower() == 'true'
        raise ConfigurationError(f"'{name}' expects a boolean, got {value!r}")
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"'{name}' expects an integer, got {value!r}")
        return int(value)
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"'{name}' expects a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"'{name}' expects a string, got {value!r}")
        return value
    if get_origin(annotation) is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"'{name}' expects a list, got {value!r}")
        item = get_args(annotation)[0] if get_args(annotation) else Any
        return [v if item is Any else _coerce(item, v, name) for v in value]
    return value


def parse_override(text: str) -> Tuple[str, Any]:
    """
    Parses one `section.key=value` flag.

    The value is read as JSON when possible (numbers, booleans, lists) and as a
    plain string otherwise.
    """
    if '=' not in text:
        raise ConfigurationError(f"Override '{text}' must look like section.key=value")
    dotted, raw = text.split('=', 1)
    _split_dotted(dotted.strip())
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.strip(), value


def load_experiment(config_path: Optional[Union[str, Path]] = None,
                    overrides: Sequence[str] = (),
                    profile: Optional[str] = None) -> ExperimentConfig:
    """
    Resolves an experiment config from profile, file, overrides and environment.

    Raises:
        ConfigurationError: Unknown keys, malformed values, or a config that
            fails validation.
    """
    from .validator import validate_config

    file_values: Dict[str, Any] = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            file_values = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(file_values, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")

    cfg = ExperimentConfig.from_profile(profile or file_values.get('profile') or config.DEFAULT_PROFILE)
    cfg.update({k: v for k, v in file_values.items() if k != 'profile'}, source=str(config_path))
    for text in overrides:
        dotted, value = parse_override(text)
        section, key = _split_dotted(dotted)
        cfg.set(section, key, value, source=f"override '{text}'")

    if config.SALIGN_SEED:
        try:
            cfg.train.seed = int(config.SALIGN_SEED)
        except ValueError:
            raise ConfigurationError(f"SALIGN_SEED must be an integer, got '{config.SALIGN_SEED}'")
        logger.info(f"Training seed overridden by SALIGN_SEED={cfg.train.seed}")

    cfg.resolve()
    errors, _ = validate_config(cfg)
    if errors:
        raise ConfigurationError("; ".join(errors))
    return cfg
