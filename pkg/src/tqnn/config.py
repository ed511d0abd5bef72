"""Configuration file handling and hyperparameter profiles for tqnn."""

import os
from dataclasses import fields
from typing import Any, Optional

import yaml

from .cli import DEFAULT_OUT_DIR, DEFAULT_PROFILE, ExperimentConfig, parse_qubit_range
from .data import DataSource
from .errors import ConfigError
from .fisher import FisherConfig
from .hybrid import TrainConfig
from .nsga2 import EvolutionConfig
from .transformer import TransformerConfig

# Hyperparameters per profile. "paper" follows the published protocol,
# "desk" shrinks it so a search finishes in minutes on one core.
PROFILES: dict[str, dict[str, Any]] = {
    'paper': {
        'evolution': {'population_size': 20, 'offspring_size': 20, 'generations': 50, 'p_c': 0.9, 'p_m': None},
        'train': {'inner_epochs': 50, 'batch_size': 32, 'lr': 1e-3},
        'outer_epochs': {'iris': 250, 'breast_cancer': 100, 'mnist': 500, 'heart': 400},
        'fisher': {'k_samples': 256, 'top_k': 10, 'label_mode': 'model'},
        'mnist': {'train_subsample': None, 'test_subsample': 150},
        'top_k': 10,
    },
    'desk': {
        'evolution': {'population_size': 8, 'offspring_size': 8, 'generations': 10, 'p_c': 0.9, 'p_m': None},
        'train': {'inner_epochs': 15, 'batch_size': 32, 'lr': 1e-2},
        'outer_epochs': {'iris': 60, 'breast_cancer': 60, 'mnist': 60, 'heart': 60},
        'fisher': {'k_samples': 256, 'top_k': 10, 'label_mode': 'model'},
        'mnist': {'train_subsample': 600, 'test_subsample': 150},
        'top_k': 10,
    },
}

MNIST_PATCH_SIZE = 4

_SECTIONS = {
    'evolution': EvolutionConfig,
    'train': TrainConfig,
    'fisher': FisherConfig,
    'transformer': TransformerConfig,
    'dataset': DataSource,
}

_TOP_LEVEL_KEYS = {
    'dataset', 'qubits', 'seed', 'profile', 'out', 'top_k', 'shots', 'parallel',
    'verbose', 'quiet', 'error_log', 'check_invariants',
    'evolution', 'train', 'fisher', 'transformer',
}


def _apply_section(target: Any, section: str, values: dict[str, Any]) -> None:
    """Set dataclass fields from a config-file section, rejecting unknown keys."""
    known = {f.name for f in fields(target)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"Unknown key {section}.{key}")
        setattr(target, key, value)


def apply_profile(config: ExperimentConfig) -> ExperimentConfig:
    """Fill nested hyperparameters from the profile, then re-apply file overrides."""
    profile = PROFILES.get(config.profile)
    if profile is None:
        raise ConfigError(f"Unknown profile: {config.profile}")
    name = config.dataset.name

    config.evolution = EvolutionConfig(
        n_qubits=config.qubits[0], seed=config.seed, **profile['evolution']
    )
    config.train = TrainConfig(
        outer_epochs=profile['outer_epochs'].get(name, 60),
        seed=config.seed,
        dump_dir=config.out_dir,
        **profile['train'],
    )
    config.fisher = FisherConfig(seed=config.seed, **profile['fisher'])
    if name == 'mnist':
        config.encoder = TransformerConfig(
            n_qubits=config.qubits[0], token_mode='patch', patch_size=MNIST_PATCH_SIZE, seed=config.seed
        )
        config.dataset.train_subsample = profile['mnist']['train_subsample']
        config.dataset.test_subsample = profile['mnist']['test_subsample']
    else:
        config.encoder = TransformerConfig(n_qubits=config.qubits[0], seed=config.seed)
    config.top_k = profile['top_k']

    targets = {
        'evolution': config.evolution,
        'train': config.train,
        'fisher': config.fisher,
        'transformer': config.encoder,
        'dataset': config.dataset,
    }
    for section, values in config.overrides.items():
        if section == 'top_k':
            config.top_k = int(values)
        else:
            _apply_section(targets[section], section, values)
    return config


def load_config(config_path: str) -> ExperimentConfig:
    """Load configuration from a YAML file."""
    try:
        with open(config_path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {config_path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config file must contain a mapping: {config_path}")
    return _parse_config_dict(data, config_path)


def _parse_config_dict(data: dict[str, Any], config_path: str) -> ExperimentConfig:
    """Parse a configuration dictionary into ExperimentConfig."""
    unknown = sorted(set(data) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys in {config_path}: {', '.join(unknown)}")

    config = ExperimentConfig()

    if 'profile' in data:
        config.profile = str(data['profile'])

    if 'dataset' in data:
        value = data['dataset']
        if isinstance(value, str):
            value = {'name': value}
        if not isinstance(value, dict):
            raise ConfigError(f"'dataset' must be a name or a mapping: {config_path}")
        _apply_section(config.dataset, 'dataset', value)
        config.overrides['dataset'] = {k: v for k, v in value.items() if k != 'name'}

    if 'qubits' in data:
        try:
            config.qubits = parse_qubit_range(str(data['qubits']))
        except ValueError as e:
            raise ConfigError(str(e)) from e

    if 'seed' in data:
        config.seed = int(data['seed'])

    if 'out' in data:
        config.out_dir = str(data['out'])

    if 'top_k' in data:
        config.overrides['top_k'] = int(data['top_k'])

    if 'shots' in data:
        config.shots = None if data['shots'] is None else int(data['shots'])

    if 'parallel' in data:
        config.parallel = int(data['parallel'])

    if 'verbose' in data:
        config.verbose = int(data['verbose'])

    if 'quiet' in data:
        config.quiet = bool(data['quiet'])

    if 'error_log' in data:
        config.error_log = str(data['error_log'])

    if 'check_invariants' in data:
        config.check_invariants = bool(data['check_invariants'])

    for section in ('evolution', 'train', 'fisher', 'transformer'):
        if section in data:
            values = data[section] or {}
            if not isinstance(values, dict):
                raise ConfigError(f"'{section}' must be a mapping: {config_path}")
            config.overrides[section] = dict(values)

    return apply_profile(config)


def merge_configs(file_config: ExperimentConfig, cli_config: ExperimentConfig) -> ExperimentConfig:
    """Merge file config with CLI config. CLI takes precedence for explicitly set values.

    The file config provides defaults, and CLI arguments override them.
    """
    merged = file_config
    merged.command = cli_config.command
    merged.config_file = cli_config.config_file
    merged.genome_text = cli_config.genome_text
    merged.checkpoints = file_config.checkpoints + cli_config.checkpoints

    # Dataset: CLI overrides name and any path it was given
    cli_data = cli_config.dataset
    if cli_data.name != DataSource().name:
        merged.dataset.name = cli_data.name
    for attr in ('path', 'schema', 'mnist_images', 'mnist_labels', 'mnist_test_images', 'mnist_test_labels'):
        value = getattr(cli_data, attr)
        if value is not None:
            setattr(merged.dataset, attr, value)

    if cli_config.qubits != (3, 3):
        merged.qubits = cli_config.qubits
    if cli_config.seed != 0:
        merged.seed = cli_config.seed
    if cli_config.profile != DEFAULT_PROFILE:
        merged.profile = cli_config.profile
    if cli_config.out_dir != DEFAULT_OUT_DIR:
        merged.out_dir = cli_config.out_dir

    if cli_config.shots is not None:
        merged.shots = cli_config.shots
    if cli_config.parallel != 0:
        merged.parallel = cli_config.parallel
    if cli_config.check_invariants:
        merged.check_invariants = True
    if cli_config.verbose > 0:
        merged.verbose = cli_config.verbose
    if cli_config.quiet:
        merged.quiet = True
    if cli_config.error_log:
        merged.error_log = cli_config.error_log

    return merged


def get_default_config_paths() -> list[str]:
    """Return list of default config file locations to check."""
    config_home = os.environ.get('XDG_CONFIG_HOME', os.path.expanduser('~/.config'))

    return [
        # Current directory
        'tqnn.yaml',
        'tqnn.yml',
        '.tqnn.yaml',
        '.tqnn.yml',
        # User config directory
        os.path.join(config_home, 'tqnn', 'config.yaml'),
        os.path.join(config_home, 'tqnn', 'config.yml'),
    ]


def find_config_file() -> Optional[str]:
    """Find the first existing config file from default locations."""
    for path in get_default_config_paths():
        if os.path.isfile(path):
            return path
    return None


# Example config file content for documentation
EXAMPLE_CONFIG = """
# tqnn configuration file
# Save as ./tqnn.yaml or ~/.config/tqnn/config.yaml

# Dataset: a name, or a mapping with paths and split settings
dataset:
  name: breast_cancer
  path: data/wdbc.data
  test_frac: 0.2
  validation_frac: 0.0   # > 0 keeps fitness off the test rows

# Qubit count or inclusive range within [2, 12]
qubits: "3..6"

seed: 0
profile: desk   # desk or paper
out: results

# Hyperparameters below override the profile
evolution:
  population_size: 20
  generations: 50
  p_c: 0.9

train:
  inner_epochs: 50
  outer_epochs: 100
  batch_size: 32
  lr: 0.001

fisher:
  k_samples: 256
  top_k: 10
  label_mode: model   # model or data

transformer:
  d_model: 16
  n_heads: 2

top_k: 10
shots: null      # e.g. 1024 for sampled readout in reported accuracy
parallel: 0      # 0 = auto
verbose: 1       # 0=normal, 1=verbose, 2=rich display
"""
