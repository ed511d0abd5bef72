"""Bi-objective NSGA-II over circuit genomes.

Objectives are (accuracy, gates): accuracy is maximized, gates minimized.
Internally both are minimized by negating accuracy.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ContractError
from .genome import Genome, crossover, genome_length, max_gate_count, mutate, random_genome
from .pool import EvaluationPool, EvaluationStatus, EvaluationWorker

Objectives = tuple[float, float]
EvaluateFn = Callable[[Genome, int], Objectives]


@dataclass
class Individual:
    """A genome with its fitness and NSGA-II bookkeeping."""

    genome: Genome
    accuracy: float = 0.0
    gates: float = 0.0
    rank: int = -1
    crowding: float = 0.0
    error: Optional[str] = None

    @property
    def objectives(self) -> Objectives:
        return self.accuracy, self.gates

    @property
    def minimized(self) -> Objectives:
        return -self.accuracy, self.gates

    def sort_key(self) -> tuple[float, float, tuple[int, ...]]:
        """Highest accuracy, then fewest gates, then genome bits."""
        return -self.accuracy, self.gates, self.genome.bits


@dataclass
class EvolutionConfig:
    """Search hyperparameters. ``p_m=None`` means 1/(genome length)."""

    n_qubits: int = 3
    population_size: int = 20
    offspring_size: int = 20
    generations: int = 50
    p_c: float = 0.9
    p_m: Optional[float] = None
    seed: int = 0

    @property
    def mutation_rate(self) -> float:
        if self.p_m is not None:
            return self.p_m
        return 1.0 / max(1, genome_length(self.n_qubits))

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        if self.n_qubits < 2:
            errors.append(f"n_qubits must be >= 2: {self.n_qubits}")
        if self.population_size < 2:
            errors.append(f"population_size must be >= 2: {self.population_size}")
        if self.offspring_size < 2:
            errors.append(f"offspring_size must be >= 2: {self.offspring_size}")
        if self.generations < 0:
            errors.append(f"generations must be >= 0: {self.generations}")
        if not 0.0 <= self.p_c <= 1.0:
            errors.append(f"p_c must be in [0, 1]: {self.p_c}")
        if self.p_m is not None and not 0.0 <= self.p_m <= 1.0:
            errors.append(f"p_m must be in [0, 1]: {self.p_m}")
        return errors


@dataclass
class GenerationRecord:
    """Snapshot of front 0 after a generation's survivor selection."""

    generation: int
    front: list[Individual]

    @property
    def best_accuracy(self) -> float:
        return max(ind.accuracy for ind in self.front)


@dataclass
class EvolutionResult:
    population: list[Individual]
    history: list[GenerationRecord] = field(default_factory=list)
    failures: int = 0

    @property
    def front(self) -> list[Individual]:
        """Final non-dominated set."""
        return self.history[-1].front if self.history else []


def derive_seed(seed: int, generation: int, index: int) -> int:
    """Per-individual seed, independent of evaluation order."""
    return int(np.random.SeedSequence([seed, generation, index]).generate_state(1)[0])


def dominates(a: Individual, b: Individual) -> bool:
    """True iff ``a`` is no worse in every objective and better in one."""
    ma, mb = a.minimized, b.minimized
    no_worse = all(x <= y for x, y in zip(ma, mb))
    better = any(x < y for x, y in zip(ma, mb))
    return no_worse and better


def non_dominated_sort(pop: Sequence[Individual]) -> list[list[Individual]]:
    """Partition ``pop`` into fronts and set each ``rank``."""
    if not pop:
        raise ContractError("cannot sort an empty population")
    dominated_by: list[list[int]] = [[] for _ in pop]
    counts = [0] * len(pop)
    fronts: list[list[int]] = [[]]
    for p, a in enumerate(pop):
        for q, b in enumerate(pop):
            if p == q:
                continue
            if dominates(a, b):
                dominated_by[p].append(q)
            elif dominates(b, a):
                counts[p] += 1
        if counts[p] == 0:
            fronts[0].append(p)

    k = 0
    while fronts[k]:
        following = []
        for p in fronts[k]:
            pop[p].rank = k
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    following.append(q)
        k += 1
        fronts.append(sorted(following))
    return [[pop[i] for i in front] for front in fronts if front]


def crowding_distance(front: Sequence[Individual]) -> None:
    """Set ``crowding`` on every member of one front."""
    size = len(front)
    for ind in front:
        ind.crowding = 0.0
    if size <= 2:
        for ind in front:
            ind.crowding = math.inf
        return
    for m in range(2):
        order = sorted(range(size), key=lambda i: front[i].minimized[m])
        lo = front[order[0]].minimized[m]
        hi = front[order[-1]].minimized[m]
        front[order[0]].crowding = math.inf
        front[order[-1]].crowding = math.inf
        if hi == lo:
            continue
        for pos in range(1, size - 1):
            ind = front[order[pos]]
            if math.isinf(ind.crowding):
                continue
            gap = front[order[pos + 1]].minimized[m] - front[order[pos - 1]].minimized[m]
            ind.crowding += gap / (hi - lo)


def _crowded_better(a: Individual, b: Individual, rng: np.random.Generator) -> Individual:
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def binary_tournament(pop: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Pick two distinct members; lower rank, then larger crowding, then a coin flip."""
    i, j = rng.choice(len(pop), size=2, replace=False)
    return _crowded_better(pop[int(i)], pop[int(j)], rng)


def select_survivors(merged: Sequence[Individual], size: int) -> list[Individual]:
    """Elitist refill by rank, then crowding (ties: accuracy, gates, bits)."""
    survivors: list[Individual] = []
    for front in non_dominated_sort(merged):
        crowding_distance(front)
        if len(survivors) + len(front) <= size:
            survivors.extend(front)
            continue
        ranked = sorted(front, key=lambda ind: (-ind.crowding, ind.sort_key()))
        survivors.extend(ranked[: size - len(survivors)])
        break
    return survivors


def select_top_k(front: Sequence[Individual], k: int) -> list[Individual]:
    """The ``k`` most accurate members (ties: fewer gates, then genome bits)."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    return sorted(front, key=Individual.sort_key)[:k]


def check_front(pop: Sequence[Individual]) -> None:
    """Raise if a rank-0 member is dominated by anyone in ``pop``."""
    for a in pop:
        if a.rank != 0:
            continue
        for b in pop:
            if dominates(b, a):
                raise ContractError(f"front member {a.genome} is dominated by {b.genome}")


def _snapshot(pop: Sequence[Individual]) -> list[Individual]:
    return sorted((replace(ind) for ind in pop if ind.rank == 0), key=Individual.sort_key)


class Evolution:
    """One NSGA-II run; ``run()`` returns the final population and history."""

    def __init__(
        self,
        cfg: EvolutionConfig,
        evaluate: EvaluateFn,
        pool: Optional[EvaluationPool] = None,
        on_generation: Optional[Callable[[GenerationRecord], None]] = None,
        on_error: Optional[Callable[[Genome, str], None]] = None,
        check_invariants: bool = False,
        should_stop: Optional[Callable[[], bool]] = None,
    ):
        errors = cfg.validate()
        if errors:
            raise ContractError("; ".join(errors))
        self.cfg = cfg
        self.evaluate = evaluate
        self.pool = pool or EvaluationPool(max_workers=1)
        self.on_generation = on_generation
        self.on_error = on_error
        self.check_invariants = check_invariants
        self.should_stop = should_stop
        self.rng = np.random.default_rng(cfg.seed)
        self.failures = 0
        self._cache: dict[tuple[int, ...], Individual] = {}

    def _evaluate_batch(self, genomes: Sequence[Genome], generation: int) -> list[Individual]:
        """Evaluate unseen genomes (first occurrence wins the seed)."""
        pending: dict[tuple[int, ...], int] = {}
        for index, genome in enumerate(genomes):
            if genome.bits not in self._cache and genome.bits not in pending:
                pending[genome.bits] = index

        workers = []
        for bits, index in pending.items():
            genome = genomes[index]
            seed = derive_seed(self.cfg.seed, generation, index)
            workers.append(
                EvaluationWorker(
                    index,
                    genome.to_text(),
                    (lambda genome=genome, seed=seed: self.evaluate(genome, seed)),
                )
            )

        for result in self.pool.run_all(workers):
            genome = genomes[result.index]
            if result.status == EvaluationStatus.COMPLETED:
                accuracy, gates = result.value
                ind = Individual(genome, float(accuracy), float(gates))
            else:
                message = result.error_message or result.status.value
                ind = Individual(genome, 0.0, float(max_gate_count(genome.n_qubits)), error=message)
                self.failures += 1
                if self.on_error:
                    self.on_error(genome, message)
            self._cache[genome.bits] = ind

        return [replace(self._cache[g.bits], rank=-1, crowding=0.0) for g in genomes]

    def _make_offspring(self, pop: Sequence[Individual]) -> list[Genome]:
        cfg = self.cfg
        children: list[Genome] = []
        while len(children) < cfg.offspring_size:
            mother = binary_tournament(pop, self.rng)
            father = binary_tournament(pop, self.rng)
            c1, c2 = crossover(mother.genome, father.genome, self.rng, cfg.p_c)
            children.append(mutate(c1, cfg.mutation_rate, self.rng))
            if len(children) < cfg.offspring_size:
                children.append(mutate(c2, cfg.mutation_rate, self.rng))
        return children

    def _record(self, pop: list[Individual], generation: int, history: list[GenerationRecord]) -> None:
        if self.check_invariants:
            check_front(pop)
        record = GenerationRecord(generation, _snapshot(pop))
        history.append(record)
        if self.on_generation:
            self.on_generation(record)

    def run(self) -> EvolutionResult:
        cfg = self.cfg
        initial = [random_genome(cfg.n_qubits, self.rng) for _ in range(cfg.population_size)]
        pop = self._evaluate_batch(initial, 0)
        for front in non_dominated_sort(pop):
            crowding_distance(front)
        history: list[GenerationRecord] = []
        self._record(pop, 0, history)

        for generation in range(1, cfg.generations + 1):
            if self.should_stop and self.should_stop():
                break
            offspring = self._evaluate_batch(self._make_offspring(pop), generation)
            pop = select_survivors(pop + offspring, cfg.population_size)
            self._record(pop, generation, history)

        return EvolutionResult(pop, history, self.failures)


def evolve(
    cfg: EvolutionConfig,
    evaluate: EvaluateFn,
    pool: Optional[EvaluationPool] = None,
    on_generation: Optional[Callable[[GenerationRecord], None]] = None,
    on_error: Optional[Callable[[Genome, str], None]] = None,
    check_invariants: bool = False,
) -> EvolutionResult:
    """Run NSGA-II for ``cfg.generations`` generations."""
    return Evolution(cfg, evaluate, pool, on_generation, on_error, check_invariants).run()
