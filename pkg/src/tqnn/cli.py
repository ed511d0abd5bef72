"""Command-line interface for tqnn."""

import argparse
import re
import sys
from dataclasses import dataclass, field
from typing import Any, Optional

from . import __version__
from .data import DATASETS, DataSource
from .errors import EXIT_CONFIG, EXIT_INTERRUPTED, EXIT_IO, ConfigError, TqnnError
from .fisher import FisherConfig
from .genome import MIN_QUBITS
from .hybrid import TrainConfig
from .nsga2 import EvolutionConfig
from .qsim import MAX_QUBITS
from .transformer import TransformerConfig

COMMANDS = ("search", "fisher", "replay")
PROFILE_NAMES = ("desk", "paper")
DEFAULT_PROFILE = "desk"
DEFAULT_OUT_DIR = "results"


def parse_qubit_range(text: str) -> tuple[int, int]:
    """Parse a qubit range like '3..6' or a single count like '4'.

    Both ends are inclusive and must lie in [2, 12].
    """
    text = text.strip()
    match = re.match(r'^(\d+)(?:\s*\.\.\s*(\d+))?$', text)
    if not match:
        raise ValueError(f"Invalid qubit range: {text!r} (expected N or A..B)")

    low = int(match.group(1))
    high = int(match.group(2)) if match.group(2) is not None else low
    if low > high:
        raise ValueError(f"Empty qubit range: {text}")
    if low < MIN_QUBITS or high > MAX_QUBITS:
        raise ValueError(f"Qubit range {text} outside [{MIN_QUBITS}, {MAX_QUBITS}]")
    return low, high


def _qubit_range_arg(text: str) -> tuple[int, int]:
    try:
        return parse_qubit_range(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


@dataclass
class ExperimentConfig:
    """Everything one tqnn run needs."""

    command: str = "search"
    dataset: DataSource = field(default_factory=DataSource)
    qubits: tuple[int, int] = (3, 3)
    seed: int = 0
    profile: str = DEFAULT_PROFILE
    out_dir: str = DEFAULT_OUT_DIR

    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fisher: FisherConfig = field(default_factory=FisherConfig)
    encoder: TransformerConfig = field(default_factory=TransformerConfig)
    top_k: int = 10

    # Raw hyperparameter sections from a config file, re-applied on top of the profile
    overrides: dict[str, Any] = field(default_factory=dict)

    genome_text: Optional[str] = None  # replay only
    checkpoints: list[str] = field(default_factory=list)  # fisher only
    shots: Optional[int] = None
    parallel: int = 0  # 0 = auto
    check_invariants: bool = False
    verbose: int = 0  # 0=normal, 1=verbose, 2=rich progress
    quiet: bool = False
    config_file: Optional[str] = None
    error_log: Optional[str] = None

    @property
    def qubit_counts(self) -> list[int]:
        return list(range(self.qubits[0], self.qubits[1] + 1))

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []

        if self.command not in COMMANDS:
            errors.append(f"Unknown command: {self.command}")

        if self.profile not in PROFILE_NAMES:
            errors.append(f"Unknown profile {self.profile!r}; choose from {', '.join(PROFILE_NAMES)}")

        low, high = self.qubits
        if not MIN_QUBITS <= low <= high <= MAX_QUBITS:
            errors.append(f"Qubit range {low}..{high} must lie within [{MIN_QUBITS}, {MAX_QUBITS}]")

        if self.top_k < 1:
            errors.append(f"top_k must be >= 1: {self.top_k}")

        if self.shots is not None and self.shots < 1:
            errors.append(f"Shots must be positive: {self.shots}")

        if self.parallel < 0:
            errors.append(f"Parallel must be 0 (auto) or positive: {self.parallel}")

        if self.command == "replay" and not self.genome_text:
            errors.append("replay needs a genome, e.g. 3:101")

        errors += [f"dataset: {e}" for e in self.dataset.validate()]
        errors += [f"evolution: {e}" for e in self.evolution.validate()]
        errors += [f"train: {e}" for e in self.train.validate()]
        errors += [f"fisher: {e}" for e in self.fisher.validate()]
        errors += [
            f"transformer: {e}"
            for e in self.encoder.validate()
            if not e.startswith("n_qubits")
        ]
        return errors


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog='tqnn',
        description='Transformer-assisted quantum neural network circuit search.',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s search --dataset iris --qubits 3..5
  %(prog)s search --dataset breast_cancer --data wdbc.data --qubits 4 --profile paper
  %(prog)s fisher --dataset iris --qubits 3..5 --out results
  %(prog)s replay 3:100 --dataset iris -v
"""
    )

    parser.add_argument(
        'command',
        choices=COMMANDS,
        help='search: evolve circuits; fisher: Fisher spectra of checkpoints; replay: train one circuit'
    )

    parser.add_argument(
        'genome',
        nargs='?',
        default=None,
        help='genome text N:bits (replay only)'
    )

    parser.add_argument(
        '--dataset',
        choices=DATASETS,
        default='iris',
        help='dataset to use (default: iris)'
    )

    parser.add_argument(
        '--qubits',
        type=_qubit_range_arg,
        default=(3, 3),
        metavar='A..B',
        help='qubit count or inclusive range, within [2, 12] (default: 3)'
    )

    parser.add_argument(
        '--seed',
        type=int,
        default=0,
        help='master seed (default: 0)'
    )

    parser.add_argument(
        '--profile',
        choices=PROFILE_NAMES,
        default=DEFAULT_PROFILE,
        help='hyperparameter profile (default: desk)'
    )

    parser.add_argument(
        '--out',
        default=DEFAULT_OUT_DIR,
        metavar='DIR',
        dest='out_dir',
        help='output directory (default: results)'
    )

    parser.add_argument(
        '--data',
        metavar='CSV',
        help='CSV file for breast_cancer or heart'
    )

    parser.add_argument(
        '--schema',
        metavar='YAML',
        help='override the built-in dataset schema'
    )

    parser.add_argument('--mnist-images', metavar='IDX', help='MNIST training images (IDX)')
    parser.add_argument('--mnist-labels', metavar='IDX', help='MNIST training labels (IDX)')
    parser.add_argument('--mnist-test-images', metavar='IDX', help='MNIST test images (IDX)')
    parser.add_argument('--mnist-test-labels', metavar='IDX', help='MNIST test labels (IDX)')

    parser.add_argument(
        '--checkpoint',
        action='append',
        default=[],
        metavar='FILE',
        dest='checkpoints',
        help='model checkpoint for fisher (repeatable; default: model files in --out)'
    )

    parser.add_argument(
        '--shots',
        type=int,
        default=None,
        metavar='N',
        help='report accuracy from N measurement shots instead of exact expectations'
    )

    parser.add_argument(
        '--parallel',
        type=int,
        default=0,
        metavar='N',
        help='concurrent fitness evaluations; 0=auto (default: 0)'
    )

    parser.add_argument(
        '--check-invariants',
        action='store_true',
        help='verify front non-domination after every generation'
    )

    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        '-v', '--verbose',
        action='count',
        default=0,
        help='increase verbosity (-v for verbose, -vv for rich progress)'
    )

    verbosity.add_argument(
        '-q', '--quiet',
        action='store_true',
        help='suppress non-error output'
    )

    parser.add_argument(
        '--config',
        metavar='FILE',
        dest='config_file',
        help='configuration file (YAML format)'
    )

    parser.add_argument(
        '--error-log',
        metavar='FILE',
        help='file to log errors to'
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'%(prog)s {__version__}'
    )

    return parser


def parse_args(args: Optional[list[str]] = None) -> ExperimentConfig:
    """Parse command-line arguments and return an ExperimentConfig."""
    parser = create_parser()
    parsed = parser.parse_args(args)

    dataset = DataSource(
        name=parsed.dataset,
        path=parsed.data,
        schema=parsed.schema,
        mnist_images=parsed.mnist_images,
        mnist_labels=parsed.mnist_labels,
        mnist_test_images=parsed.mnist_test_images,
        mnist_test_labels=parsed.mnist_test_labels,
    )

    config = ExperimentConfig(
        command=parsed.command,
        dataset=dataset,
        qubits=parsed.qubits,
        seed=parsed.seed,
        profile=parsed.profile,
        out_dir=parsed.out_dir,
        genome_text=parsed.genome,
        checkpoints=parsed.checkpoints,
        shots=parsed.shots,
        parallel=parsed.parallel,
        check_invariants=parsed.check_invariants,
        verbose=parsed.verbose,
        quiet=parsed.quiet,
        config_file=parsed.config_file,
        error_log=parsed.error_log,
    )

    from .config import apply_profile
    return apply_profile(config)


def main_cli(argv: Optional[list[str]] = None) -> int:
    """Main CLI entry point. Returns exit code."""
    config = parse_args(argv)

    try:
        # Load config file if specified or found (merges with CLI args)
        from .config import apply_profile, find_config_file, load_config, merge_configs
        config_path = config.config_file or find_config_file()
        if config_path:
            file_config = load_config(config_path)
            config = apply_profile(merge_configs(file_config, config))
    except (OSError, ConfigError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code if isinstance(e, TqnnError) else EXIT_CONFIG

    # Validate configuration
    errors = config.validate()
    if errors:
        for error in errors:
            print(f"Error: {error}", file=sys.stderr)
        return EXIT_CONFIG

    from .experiment import ExperimentCoordinator

    try:
        coordinator = ExperimentCoordinator(config)
        return coordinator.run()
    except KeyboardInterrupt:
        if not config.quiet:
            print("\nInterrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except TqnnError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO
