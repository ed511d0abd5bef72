"""Experiment coordinator: circuit search, Fisher analysis and replay."""

import csv
import math
import os
import signal
import sys
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, TextIO

import yaml

from . import __version__
from .cli import ExperimentConfig
from .data import Dataset, load_source
from .display import format_duration
from .errors import EXIT_FAILURE, EXIT_INTERRUPTED, EXIT_OK, ConfigError, TqnnError
from .fisher import FisherReport, empirical_fisher_eigs, write_report_csv, write_spectrum
from .genome import Genome, decode, parse_genome
from .hybrid import (
    EpochMetrics,
    HybridModel,
    TrainResult,
    accuracy,
    confusion_matrix,
    fitness,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)
from .nsga2 import Evolution, GenerationRecord, Individual, derive_seed, select_top_k
from .pool import EvaluationPool, EvaluationStatus
from .qsim import draw_circuit
from .transformer import TransformerConfig

# Seed stream for outer retraining, disjoint from generation numbers
RETRAIN_STREAM = 1_000_000


@dataclass
class SearchStats:
    """Live counters shared with the progress display."""

    dataset: str = ""
    n_qubits: int = 0
    generation: int = 0
    generations: int = 0
    cells_done: int = 0
    cells_total: int = 0
    evaluations: int = 0
    failures: int = 0
    front: list[Individual] = field(default_factory=list)


@dataclass
class RetrainedCircuit:
    """A circuit retrained for the outer epochs and scored."""

    genome: Genome
    validation_accuracy: float
    test_accuracy: float
    gates: int
    model: HybridModel
    history: TrainResult

    def rank_key(self) -> tuple[float, float, int, tuple[int, ...]]:
        return -self.validation_accuracy, -self.test_accuracy, self.gates, self.genome.bits


@dataclass
class CellResult:
    """Outcome of the search for one qubit count."""

    dataset: str
    n_qubits: int
    status: str = "ok"
    best: Optional[RetrainedCircuit] = None
    history: list[GenerationRecord] = field(default_factory=list)
    evaluations: int = 0
    failures: int = 0
    message: str = ""

    @property
    def front(self) -> list[Individual]:
        return self.history[-1].front if self.history else []


def _fmt(value: float) -> str:
    return "%.12g" % value


class ExperimentCoordinator:
    """Orchestrates one tqnn command."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.stats = SearchStats(dataset=config.dataset.name, cells_total=len(config.qubit_counts))
        self._shutdown = threading.Event()
        self._display: Any = None
        self._lock = threading.Lock()
        self._started_at = time.monotonic()

        # Open error log file if specified
        self._error_log_file: Optional[TextIO] = None
        if config.error_log:
            self._error_log_file = open(config.error_log, 'a')

        # Worker count: auto (0) means min(offspring, cpu count)
        if config.parallel == 0:
            max_workers = max(1, min(config.evolution.offspring_size, os.cpu_count() or 1))
        else:
            max_workers = config.parallel
        self.pool = EvaluationPool(max_workers=max_workers)

        self._previous_handlers = {
            signal.SIGINT: signal.signal(signal.SIGINT, self._signal_handler),
            signal.SIGTERM: signal.signal(signal.SIGTERM, self._signal_handler),
        }

    def _signal_handler(self, signum: int, frame: Any) -> None:
        """Handle shutdown signals."""
        self._shutdown.set()
        self.pool.cancel_all()

    @property
    def out_dir(self) -> Path:
        return Path(self.config.out_dir)

    def run(self) -> int:
        """Run the configured command. Returns exit code."""
        if self.config.verbose >= 2 and not self.config.quiet and self.config.command == 'search':
            from .display import ProgressDisplay
            self._display = ProgressDisplay(self.pool, self.stats)
            self._display.start()

        try:
            if self.config.command == 'search':
                cells = self.run_search()
                if self._shutdown.is_set():
                    return EXIT_INTERRUPTED
                return EXIT_OK if all(c.status == 'ok' for c in cells) else EXIT_FAILURE
            if self.config.command == 'fisher':
                self.run_fisher()
                return EXIT_OK
            self.replay()
            return EXIT_OK
        finally:
            if self._display:
                self._display.stop()
                self._display = None
            if self._error_log_file:
                self._error_log_file.close()
                self._error_log_file = None
            self.pool.shutdown()
            for signum, handler in self._previous_handlers.items():
                signal.signal(signum, handler)

    def _load_data(self) -> Dataset:
        data = load_source(self.config.dataset, self.config.seed)
        self._log_verbose(
            f"Loaded {data.name}: {data.n_rows} rows, {data.n_features} features, "
            f"{data.n_classes} classes; train {len(data.train_idx)}, "
            f"validation {len(data.val_idx)}, test {len(data.test_idx)}"
        )
        return data

    def _encoder_config(self, n_qubits: int) -> TransformerConfig:
        return replace(self.config.encoder, n_qubits=n_qubits)

    # Search

    def run_search(self) -> list[CellResult]:
        """Evolve, retrain the top circuits and write reports for every qubit count."""
        cfg = self.config
        data = self._load_data()
        self.out_dir.mkdir(parents=True, exist_ok=True)

        cells: list[CellResult] = []
        for n in cfg.qubit_counts:
            if self._shutdown.is_set():
                break
            self._log_info(f"Searching {cfg.dataset.name} with {n} qubits...")
            try:
                cell = self.search_cell(data, n)
                self._write_cell_artifacts(cell)
            except (TqnnError, OSError) as e:
                cell = CellResult(cfg.dataset.name, n, status='failed', message=f"{type(e).__name__}: {e}")
                self._log_error(f"{cfg.dataset.name} q{n}: {e}")
            cells.append(cell)
            self.stats.cells_done += 1

        self._write_results(cells)
        self._write_manifest(data, cells)
        self._print_summary(cells)
        return cells

    def search_cell(self, data: Dataset, n_qubits: int) -> CellResult:
        """NSGA-II for one qubit count, then outer retraining of the top-k front members."""
        cfg = self.config
        if data.n_classes > n_qubits:
            raise ConfigError(f"{data.n_classes} classes need at least {data.n_classes} qubits, got {n_qubits}")

        encoder_cfg = self._encoder_config(n_qubits)
        evolution_cfg = replace(cfg.evolution, n_qubits=n_qubits)
        self.stats.n_qubits = n_qubits
        self.stats.generation = 0
        self.stats.generations = evolution_cfg.generations
        self.stats.front = []
        evaluations_before = self.stats.evaluations

        def evaluate(genome: Genome, seed: int) -> tuple[float, int]:
            score = fitness(genome, data, cfg.train, encoder_cfg, seed)
            with self._lock:
                self.stats.evaluations += 1
            return score

        evolution = Evolution(
            evolution_cfg,
            evaluate,
            pool=self.pool,
            on_generation=self._on_generation,
            on_error=self._on_evaluation_error,
            check_invariants=cfg.check_invariants,
            should_stop=self._shutdown.is_set,
        )
        result = evolution.run()
        cell = CellResult(
            cfg.dataset.name,
            n_qubits,
            history=result.history,
            evaluations=self.stats.evaluations - evaluations_before,
            failures=result.failures,
        )
        if self._shutdown.is_set():
            cell.status = 'failed'
            cell.message = 'interrupted'
            return cell

        unique: dict[tuple[int, ...], Individual] = {}
        for ind in result.front:
            if ind.error is None:
                unique.setdefault(ind.genome.bits, ind)
        if not unique:
            raise TqnnError(f"every front member failed to evaluate ({result.failures} failures)")
        top = select_top_k(list(unique.values()), cfg.top_k)
        self._log_verbose(f"Retraining {len(top)} circuit(s) for {cfg.train.outer_epochs} epochs")

        outcomes = self.pool.map(
            lambda item: self.retrain(data, item[1].genome, derive_seed(cfg.seed, RETRAIN_STREAM + n_qubits, item[0])),
            list(enumerate(top)),
            labels=[ind.genome.to_text() for ind in top],
        )
        retrained = []
        for outcome in outcomes:
            if outcome.status == EvaluationStatus.COMPLETED:
                retrained.append(outcome.value)
            else:
                self._log_error(f"Retraining {outcome.label} failed: {outcome.error_message}")
        if not retrained:
            raise TqnnError("every retraining run failed")
        cell.best = min(retrained, key=RetrainedCircuit.rank_key)
        return cell

    def retrain(
        self,
        data: Dataset,
        genome: Genome,
        seed: int,
        epochs: Optional[int] = None,
        on_epoch: Optional[Any] = None,
    ) -> RetrainedCircuit:
        """Train a fresh model for the outer epochs and score it."""
        cfg = self.config
        model = init_model(genome, data.n_features, data.n_classes, self._encoder_config(genome.n_qubits), seed)
        history = train(
            model,
            data,
            replace(cfg.train, seed=seed),
            epochs=cfg.train.outer_epochs if epochs is None else epochs,
            on_epoch=on_epoch,
        )
        validation = accuracy(model, data.validation_x, data.validation_y)
        test = accuracy(model, data.test_x, data.test_y, shots=cfg.shots, seed=seed)
        return RetrainedCircuit(genome, validation, test, model.gate_count, model, history)

    def _on_generation(self, record: GenerationRecord) -> None:
        self.stats.generation = record.generation
        self.stats.front = record.front
        self._log_verbose(
            f"  generation {record.generation}: front of {len(record.front)}, "
            f"best accuracy {record.best_accuracy:.4f}"
        )
        if self._display:
            self._display.update()

    def _on_evaluation_error(self, genome: Genome, message: str) -> None:
        with self._lock:
            self.stats.failures += 1
        self._log_error(f"Evaluation of {genome} failed: {message}")

    # Reports

    def _artifact(self, kind: str, n_qubits: Optional[int] = None, suffix: str = "csv") -> Path:
        name = self.config.dataset.name
        stem = f"{kind}_{name}" if n_qubits is None else f"{kind}_{name}_q{n_qubits}"
        return self.out_dir / f"{stem}.{suffix}"

    def _write_cell_artifacts(self, cell: CellResult) -> None:
        if cell.status != 'ok' or cell.best is None:
            return
        n = cell.n_qubits

        with open(self._artifact('front', n), 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['generation', 'genome', 'accuracy', 'gates', 'rank', 'crowding'])
            for record in cell.history:
                for ind in record.front:
                    crowding = 'inf' if math.isinf(ind.crowding) else _fmt(ind.crowding)
                    writer.writerow([
                        record.generation, ind.genome.to_text(), _fmt(ind.accuracy),
                        _fmt(ind.gates), ind.rank, crowding,
                    ])

        best = cell.best
        spec = decode(best.genome)
        header = [
            f"# genome {best.genome.to_text()}",
            f"# gates {best.gates}",
            f"# test_accuracy {_fmt(best.test_accuracy)}",
            f"# validation_accuracy {_fmt(best.validation_accuracy)}",
        ]
        diagram = draw_circuit(spec.gates, spec.n_qubits, spec.slot_labels())
        self._artifact('circuit', n, 'txt').write_text("\n".join(header) + "\n" + diagram + "\n")

        save_model(best.model, self._artifact('model', n, 'tqnn'))

    def _write_results(self, cells: list[CellResult]) -> None:
        path = self._artifact('results')
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow([
                'dataset', 'qubits', 'status', 'accuracy', 'validation_accuracy', 'gates',
                'genome', 'front_size', 'evaluations', 'failures', 'message',
            ])
            for cell in cells:
                best = cell.best
                writer.writerow([
                    cell.dataset,
                    cell.n_qubits,
                    cell.status,
                    _fmt(best.test_accuracy) if best else '',
                    _fmt(best.validation_accuracy) if best else '',
                    best.gates if best else '',
                    best.genome.to_text() if best else '',
                    len(cell.front),
                    cell.evaluations,
                    cell.failures,
                    cell.message,
                ])
        self._log_verbose(f"Wrote {path}")

    def _write_manifest(self, data: Dataset, cells: list[CellResult]) -> None:
        cfg = self.config
        manifest = {
            'tqnn_version': __version__,
            'command': cfg.command,
            'profile': cfg.profile,
            'seed': cfg.seed,
            'qubits': f"{cfg.qubits[0]}..{cfg.qubits[1]}",
            'top_k': cfg.top_k,
            'shots': cfg.shots,
            'dataset': {
                **asdict(cfg.dataset),
                'rows': data.n_rows,
                'features': data.n_features,
                'classes': data.n_classes,
                'train_rows': int(len(data.train_idx)),
                'validation_rows': int(len(data.val_idx)),
                'test_rows': int(len(data.test_idx)),
            },
            'evolution': asdict(cfg.evolution),
            'mutation_rates': {
                f"q{n}": replace(cfg.evolution, n_qubits=n).mutation_rate for n in cfg.qubit_counts
            },
            # dump_dir follows --out, which must not change the manifest
            'train': {k: v for k, v in asdict(cfg.train).items() if k != 'dump_dir'},
            'fisher': asdict(cfg.fisher),
            'transformer': asdict(cfg.encoder),
            'best_accuracy_per_generation': {
                f"q{cell.n_qubits}": [float(r.best_accuracy) for r in cell.history]
                for cell in cells
                if cell.history
            },
        }
        path = self._artifact('manifest', suffix='txt')
        path.write_text(yaml.safe_dump(manifest, sort_keys=True, default_flow_style=False))

    # Fisher

    def run_fisher(self) -> list[FisherReport]:
        """Fisher spectra for every checkpoint (or the search's model files)."""
        cfg = self.config
        data = self._load_data()
        paths = [Path(p) for p in cfg.checkpoints] or [
            self._artifact('model', n, 'tqnn') for n in cfg.qubit_counts
        ]

        reports = []
        for path in paths:
            if self._shutdown.is_set():
                break
            model = load_model(path)
            n = model.n_qubits
            if n not in cfg.qubit_counts:
                raise ConfigError(
                    f"{path} holds a {n}-qubit model; configured range is {cfg.qubits[0]}..{cfg.qubits[1]}"
                )
            if model.encoder.n_features != data.n_features or model.n_classes != data.n_classes:
                raise ConfigError(f"{path} was trained on a different dataset layout than {data.name}")

            self._log_info(f"Fisher spectrum for {path} ({cfg.fisher.k_samples} samples)...")
            report = empirical_fisher_eigs(model, data, cfg.fisher)
            self.out_dir.mkdir(parents=True, exist_ok=True)
            write_report_csv(report, self._artifact('fisher', n))
            write_spectrum(report, self.out_dir / f"fisher_{cfg.dataset.name}_q{n}_spectrum.dat")
            if report.clamped:
                self._log_info(f"  {path}: {report.clamped} log-probabilities clamped to the floor")
            self._log_info(
                f"  q{n}: lambda_0 {report.eigenvalues[0]:.6g}, "
                f"lambda_{len(report.eigenvalues) - 1}/lambda_0 {report.decay_ratio:.3g}, "
                f"top transformer share {report.energy_splits[0][0]:.3f}"
            )
            reports.append(report)
        return reports

    # Replay

    def replay(self) -> RetrainedCircuit:
        """Train and score exactly one circuit given as genome text."""
        cfg = self.config
        genome = parse_genome(cfg.genome_text or "")
        data = self._load_data()
        if data.n_classes > genome.n_qubits:
            raise ConfigError(f"{data.n_classes} classes need at least {data.n_classes} qubits")

        def on_epoch(metrics: EpochMetrics) -> None:
            self._log_verbose(f"  epoch {metrics.epoch}: loss {metrics.loss:.4f}, train accuracy {metrics.accuracy:.4f}")

        circuit = self.retrain(data, genome, cfg.seed, on_epoch=on_epoch)
        spec = decode(genome)
        self._log_info(draw_circuit(spec.gates, spec.n_qubits, spec.slot_labels()))
        self._log_info(f"Genome:              {genome.to_text()}")
        self._log_info(f"Gate count:          {circuit.gates}")
        self._log_info(f"Test accuracy:       {circuit.test_accuracy:.4f}")
        self._log_info(f"Validation accuracy: {circuit.validation_accuracy:.4f}")
        if cfg.verbose >= 1:
            matrix = confusion_matrix(predict(circuit.model, data.test_x), data.test_y, data.n_classes)
            self._log_verbose("Confusion matrix (rows actual, columns predicted):")
            for row in matrix:
                self._log_verbose("  " + " ".join(f"{v:4d}" for v in row))
        return circuit

    # Logging

    def _log_info(self, message: str) -> None:
        """Log an info message."""
        if not self.config.quiet and not self._display:
            print(message)

    def _log_verbose(self, message: str) -> None:
        """Log a verbose message."""
        if self.config.verbose >= 1 and not self.config.quiet and not self._display:
            print(message)

    def _log_error(self, message: str) -> None:
        """Log an error message to stderr and optionally to file."""
        from datetime import datetime
        timestamp = datetime.now().isoformat()
        formatted = f"ERROR: {message}"

        # Always log to stderr (even with rich display)
        print(formatted, file=sys.stderr)

        if self._error_log_file:
            with self._lock:
                self._error_log_file.write(f"[{timestamp}] {formatted}\n")
                self._error_log_file.flush()

    def _print_summary(self, cells: list[CellResult]) -> None:
        """Print final summary."""
        if self.config.quiet:
            return

        if self._display:
            self._display.stop()
            self._display = None

        print()
        print("=" * 50)
        print(f"Search Summary ({self.config.dataset.name}, {self.config.profile} profile)")
        print("=" * 50)
        print(f"Evaluations:  {self.stats.evaluations}")
        print(f"Failures:     {self.stats.failures}")
        print(f"Elapsed:      {format_duration(time.monotonic() - self._started_at)}")
        print()

        if self.config.verbose >= 1:
            from rich.console import Console
            from rich.table import Table

            table = Table(title="Best retrained circuit per qubit count")
            for column in ("Qubits", "Accuracy", "Validation", "Gates", "Genome"):
                table.add_column(column)
            for cell in cells:
                if cell.best:
                    table.add_row(
                        str(cell.n_qubits), f"{cell.best.test_accuracy:.4f}",
                        f"{cell.best.validation_accuracy:.4f}", str(cell.best.gates),
                        cell.best.genome.to_text(),
                    )
                else:
                    table.add_row(str(cell.n_qubits), "[red]failed[/red]", "", "", cell.message)
            Console().print(table)
            return

        for cell in cells:
            if cell.best:
                print(
                    f"  q{cell.n_qubits}: accuracy {cell.best.test_accuracy:.4f}, "
                    f"{cell.best.gates} gates, {cell.best.genome.to_text()}"
                )
            else:
                print(f"  q{cell.n_qubits}: failed ({cell.message})")
