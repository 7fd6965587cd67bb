"""Training config file: flat key = value lines, parsed into a validated TrainConfig."""

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from func.base_logger import logger
from data.configs import FeatureSettings, TrainingDefaults
from data.exceptions import ConfigurationError

_CHOICES = {
    'mode': ('projb', 'proje'),
    'loss': ('pointwise', 'listwise'),
    'sampler': ('candidate', 'weighted', 'adaptive'),
    'cluster_update': ('none', 'adaptive'),
    'activation': ('sigmoid', 'tanh'),
    'directions': ('both', 'tail'),
    'feature_scale': ('none', 'log1p', 'max'),
    'feature_method': FeatureSettings.METHODS,
    'feature_kernel': FeatureSettings.ALL_KERNELS,
    'eval_directions': ('tail', 'both'),
}

# key -> (lowest, highest, lowest inclusive, highest inclusive)
_RANGES = {
    'p_y': (0.0, 1.0, False, True),
    'delta': (0.0, np.inf, True, False),
    'lr': (0.0, np.inf, False, False),
    'weight_decay': (0.0, 1.0, True, False),
    'batch_size': (1, np.inf, True, False),
    'epochs': (0, np.inf, True, False),
    'dims_entity': (1, np.inf, True, False),
    'dims_relation': (1, np.inf, True, False),
    'seed': (0, np.inf, True, False),
    'beta1': (0.0, 1.0, True, False),
    'beta2': (0.0, 1.0, True, False),
    'eps': (0.0, np.inf, False, False),
    'adaptive_decay': (0.0, 1.0, False, False),
    'adaptive_floor': (0.0, np.inf, False, False),
    'knn_neighbors': (1, np.inf, True, False),
}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = TrainingDefaults.MODE
    loss: str = TrainingDefaults.LOSS
    sampler: str = TrainingDefaults.SAMPLER
    p_y: float = TrainingDefaults.P_Y
    delta: float = TrainingDefaults.DELTA
    lr: float = TrainingDefaults.LR
    weight_decay: float = TrainingDefaults.WEIGHT_DECAY
    batch_size: int = TrainingDefaults.BATCH_SIZE
    epochs: int = TrainingDefaults.EPOCHS
    dims_entity: int = TrainingDefaults.DIMS_ENTITY
    dims_relation: int = TrainingDefaults.DIMS_RELATION
    seed: int = TrainingDefaults.SEED
    cluster_update: str = TrainingDefaults.CLUSTER_UPDATE
    beta1: float = TrainingDefaults.BETA1
    beta2: float = TrainingDefaults.BETA2
    eps: float = TrainingDefaults.EPS
    activation: str = TrainingDefaults.ACTIVATION
    directions: str = TrainingDefaults.DIRECTIONS
    adaptive_decay: float = TrainingDefaults.ADAPTIVE_DECAY
    adaptive_floor: float = TrainingDefaults.ADAPTIVE_FLOOR
    feature_scale: str = TrainingDefaults.FEATURE_SCALE
    feature_method: str = TrainingDefaults.FEATURE_METHOD
    feature_kernel: str = TrainingDefaults.FEATURE_KERNEL
    knn_neighbors: int = TrainingDefaults.KNN_NEIGHBORS
    eval_directions: str = TrainingDefaults.EVAL_DIRECTIONS

    def __post_init__(self):
        for key, choices in _CHOICES.items():
            if getattr(self, key) not in choices:
                raise ConfigurationError(f"{key} = {getattr(self, key)!r}, expected one of {list(choices)}")
        for key, (low, high, low_in, high_in) in _RANGES.items():
            value = getattr(self, key)
            above = value >= low if low_in else value > low
            below = value <= high if high_in else value < high
            if not (above and below):
                raise ConfigurationError(f"{key} = {value} is outside {'[' if low_in else '('}{low}, "
                                         f"{high}{']' if high_in else ')'}")

    def snapshot(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """First 16 hex chars of SHA-256 over the sorted key/value snapshot."""
        return hashlib.sha256(json.dumps(self.snapshot(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> 'TrainConfig':
        """Copy with every override that is not None applied."""
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})

    def dumps(self) -> str:
        return ''.join(f"{key} = {value}\n" for key, value in self.snapshot().items())

    def seed_streams(self) -> dict[str, np.random.Generator]:
        """
        Independent generators for initialisation, sampling and clustering, all derived from the seed.
        """
        init, sampler, clustering = np.random.SeedSequence(self.seed).spawn(3)
        return {'init': np.random.default_rng(init), 'sampler': np.random.default_rng(sampler),
                'clustering': np.random.default_rng(clustering)}

    def clustering_seed(self) -> int:
        return int(np.random.SeedSequence(self.seed).spawn(3)[2].generate_state(1)[0])


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(key: str, raw: str, line_number: int):
    kind = _TYPES[key]
    try:
        if kind in (int, 'int'):
            return int(raw)
        if kind in (float, 'float'):
            return float(raw)
    except ValueError as e:
        raise ConfigurationError(f"line {line_number}: {key} = {raw!r} is not a valid {kind}") from e
    return raw


def parse_config_text(text: str) -> TrainConfig:
    """
    Parses key = value lines. '#' starts a comment, blank lines are ignored.
    :param text: Config text.
    :return: TrainConfig with defaults for missing keys.
    """
    values = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"line {line_number}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in _TYPES:
            raise ConfigurationError(f"line {line_number}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {line_number}: duplicate key {key!r}")
        values[key] = _convert(key, raw, line_number)
    return TrainConfig(**values)


def parse_config(path: Path | None) -> TrainConfig:
    """
    Reads a config file, or returns the defaults when no path is given.
    """
    if path is None:
        return TrainConfig()
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e}") from e
    config = parse_config_text(text)
    logger.info(f"Loaded config {path} (hash {config.config_hash()})")
    return config
