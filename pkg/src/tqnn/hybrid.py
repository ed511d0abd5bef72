"""The hybrid model: transformer angles feeding a decoded variational circuit.

Readout: logits are <Z> of the first ``n_classes`` qubits divided by a
temperature, followed by softmax and cross-entropy. Quantum gradients come
from the parameter-shift rule; the part that belongs to the input angles is
injected back into the encoder tape so one ``backward`` call covers the
transformer.
"""

import json
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np
import numpy.typing as npt

from . import autodiff as ad
from .autodiff import GraphNode, Tensor
from .errors import ConfigError, ContractError, FormatError, NumericalError
from .genome import CircuitSpec, Genome, decode, gate_count, parse_genome
from .qsim import parameter_shift_grad, run_circuit, sample_shots, z_expectations, z_from_counts
from .transformer import (
    EncoderState,
    TransformerConfig,
    dump_encoder,
    encode,
    init_encoder,
    load_encoder,
    to_angles,
)

if TYPE_CHECKING:
    from .data import Dataset

DEFAULT_TEMPERATURE = 0.5
PROB_FLOOR = 1e-12

MODEL_MAGIC = b"TQNM"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    """Optimizer settings for inner (fitness) and outer (retraining) loops."""

    inner_epochs: int = 50
    batch_size: int = 32
    outer_epochs: int = 250
    lr: float = 1e-3
    seed: int = 0
    dump_dir: Optional[str] = None

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        if self.inner_epochs < 1:
            errors.append(f"inner_epochs must be >= 1: {self.inner_epochs}")
        if self.outer_epochs < 1:
            errors.append(f"outer_epochs must be >= 1: {self.outer_epochs}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1: {self.batch_size}")
        if not self.lr >= 0.0:
            errors.append(f"lr must be >= 0: {self.lr}")
        return errors


class HybridModel:
    """Encoder weights, circuit genome and trainable circuit angles."""

    def __init__(
        self,
        encoder: EncoderState,
        genome: Genome,
        theta: GraphNode,
        n_classes: int,
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        if encoder.config.n_qubits != genome.n_qubits:
            raise ConfigError(
                f"encoder emits {encoder.config.n_qubits} angles, genome has {genome.n_qubits} qubits"
            )
        if not 1 <= n_classes <= genome.n_qubits:
            raise ConfigError(
                f"{n_classes} classes cannot be read out from {genome.n_qubits} qubits"
            )
        if temperature <= 0.0:
            raise ConfigError(f"temperature must be positive: {temperature}")
        self.encoder = encoder
        self.genome = genome
        self.circuit: CircuitSpec = decode(genome)
        if theta.value.shape != (self.circuit.n_theta_slots,):
            raise ContractError(
                f"theta must have {self.circuit.n_theta_slots} entries, got shape {theta.value.shape}"
            )
        self.theta = theta
        self.n_classes = n_classes
        self.temperature = temperature

    @property
    def n_qubits(self) -> int:
        return self.genome.n_qubits

    @property
    def block_sizes(self) -> tuple[int, int]:
        """(transformer parameter count, circuit parameter count)."""
        return self.encoder.n_parameters, int(self.theta.value.size)

    @property
    def gate_count(self) -> int:
        return gate_count(self.genome)

    def parameters(self) -> list[GraphNode]:
        """Encoder parameters in layout order, theta last."""
        return self.encoder.parameters() + [self.theta]

    def flat_values(self) -> Tensor:
        return np.concatenate([self.encoder.flat_values(), self.theta.value])

    def flat_grads(self) -> Tensor:
        return np.concatenate([p.grad.ravel() for p in self.parameters()])


def init_model(
    genome: Genome,
    n_features: int,
    n_classes: int,
    encoder_cfg: TransformerConfig,
    seed: int = 0,
    temperature: float = DEFAULT_TEMPERATURE,
) -> HybridModel:
    """Fresh model; encoder weights and theta both derive from ``seed``."""
    cfg = replace(encoder_cfg, n_qubits=genome.n_qubits, seed=seed)
    encoder = init_encoder(cfg, n_features)
    rng = np.random.default_rng([seed, 1])
    n_theta = decode(genome).n_theta_slots
    theta = ad.parameter(rng.uniform(-np.pi, np.pi, size=n_theta), name="theta")
    return HybridModel(encoder, genome, theta, n_classes, temperature)


def _softmax(logits: Tensor) -> Tensor:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def _angle_store(model: HybridModel, angles: GraphNode) -> Tensor:
    return np.concatenate([angles.value.ravel(), model.theta.value])


def expectations(model: HybridModel, x: Sequence[float]) -> Tensor:
    """Exact <Z_j> for every qubit."""
    angles = to_angles(encode(x, model.encoder))
    state = run_circuit(model.circuit.gates, model.n_qubits, _angle_store(model, angles))
    return z_expectations(state)


def forward(model: HybridModel, x: Sequence[float]) -> Tensor:
    """Class probabilities for one sample."""
    z = expectations(model, x)
    return _softmax(z[: model.n_classes] / model.temperature)


def forward_shots(model: HybridModel, x: Sequence[float], shots: int, seed: int) -> Tensor:
    """Class probabilities with <Z> estimated from ``shots`` measurements."""
    angles = to_angles(encode(x, model.encoder))
    state = run_circuit(model.circuit.gates, model.n_qubits, _angle_store(model, angles))
    z = z_from_counts(sample_shots(state, shots, seed), model.n_qubits)
    return _softmax(z[: model.n_classes] / model.temperature)


@dataclass
class SampleOutcome:
    loss: float
    probs: Tensor
    clamped: bool


def accumulate_sample_grad(model: HybridModel, x: Sequence[float], y: int, weight: float) -> SampleOutcome:
    """Add ``weight * d(-log p(y|x))`` to the ``.grad`` of every parameter."""
    if not 0 <= y < model.n_classes:
        raise ContractError(f"label {y} out of range for {model.n_classes} classes")
    n = model.n_qubits
    angles = to_angles(encode(x, model.encoder))
    store = _angle_store(model, angles)
    gates = model.circuit.gates
    z = z_expectations(run_circuit(gates, n, store))
    probs = _softmax(z[: model.n_classes] / model.temperature)

    p_y = float(probs[y])
    clamped = p_y < PROB_FLOOR
    loss = -math.log(max(p_y, PROB_FLOOR))

    # d(loss)/d<Z_c> for the read-out qubits, then chain through the circuit.
    onehot = np.zeros(model.n_classes)
    onehot[y] = 1.0
    dz = (probs - onehot) / model.temperature
    jac = parameter_shift_grad(gates, n, store, obs=range(model.n_classes))
    dstore = weight * (jac @ dz)

    ad.backward(ad.inject_grad(angles, dstore[:n]))
    model.theta.grad += dstore[n:]
    return SampleOutcome(loss, probs, clamped)


@dataclass
class BatchOutcome:
    """Mean loss over a batch with the gradients it produced."""

    loss: float
    grads: list[Tensor]
    n_correct: int


def loss_and_grads(
    model: HybridModel,
    features: npt.ArrayLike,
    labels: Sequence[int],
) -> BatchOutcome:
    """Mean cross-entropy over the batch; gradients are left in ``.grad``."""
    rows = np.asarray(features, dtype=np.float64)
    targets = [int(y) for y in labels]
    if rows.ndim != 2 or rows.shape[0] != len(targets):
        raise ContractError(f"batch features {rows.shape} do not match {len(targets)} labels")
    if not targets:
        raise ContractError("empty batch")

    params = model.parameters()
    ad.zero_grad(params)
    weight = 1.0 / len(targets)
    total = 0.0
    correct = 0
    for x, y in zip(rows, targets):
        outcome = accumulate_sample_grad(model, x, y, weight)
        total += outcome.loss
        correct += int(np.argmax(outcome.probs) == y)
    return BatchOutcome(total * weight, [p.grad.copy() for p in params], correct)


@dataclass
class EpochMetrics:
    """Training-set metrics for one pass over the data."""

    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    history: list[EpochMetrics] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.history[-1] if self.history else None


def _dump_state(model: HybridModel, cfg: TrainConfig, epoch: int) -> Optional[Path]:
    if cfg.dump_dir is None:
        return None
    path = Path(cfg.dump_dir) / f"nan_dump_{model.genome.bitstring or 'empty'}_e{epoch}.tqnn"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_model(model))
    return path


def train(
    model: HybridModel,
    data: "Dataset",
    cfg: TrainConfig,
    epochs: Optional[int] = None,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Adam over shuffled mini-batches of the training split."""
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    if set(data.train_idx.tolist()) & set(data.test_idx.tolist()):
        raise ContractError("train and test splits overlap")
    features, labels = data.train_x, data.train_y
    if len(labels) == 0:
        raise ContractError("training split is empty")

    n_epochs = cfg.inner_epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    optimizer = ad.Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult()

    for epoch in range(1, n_epochs + 1):
        order = rng.permutation(len(labels))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            try:
                outcome = loss_and_grads(model, features[batch], labels[batch])
                if not math.isfinite(outcome.loss):
                    raise NumericalError(f"non-finite loss {outcome.loss} at epoch {epoch}")
                optimizer.step()
            except NumericalError as e:
                dumped = _dump_state(model, cfg, epoch)
                where = f" (state written to {dumped})" if dumped else ""
                raise NumericalError(f"{e}{where}") from e
            loss_sum += outcome.loss * len(batch)
            correct += outcome.n_correct
        metrics = EpochMetrics(epoch, loss_sum / len(labels), correct / len(labels))
        result.history.append(metrics)
        if on_epoch:
            on_epoch(metrics)
    return result


def predict(
    model: HybridModel,
    features: npt.ArrayLike,
    shots: Optional[int] = None,
    seed: int = 0,
) -> npt.NDArray[np.int64]:
    """Arg-max class per row; ``shots`` switches to sampled readout."""
    rows = np.asarray(features, dtype=np.float64)
    out = np.empty(len(rows), dtype=np.int64)
    for i, x in enumerate(rows):
        if shots is None:
            probs = forward(model, x)
        else:
            probs = forward_shots(model, x, shots, seed + i)
        out[i] = int(np.argmax(probs))
    return out


def accuracy(
    model: HybridModel,
    features: npt.ArrayLike,
    labels: Sequence[int],
    shots: Optional[int] = None,
    seed: int = 0,
) -> float:
    targets = np.asarray(labels, dtype=np.int64)
    if targets.size == 0:
        raise ContractError("cannot score an empty split")
    return float(np.mean(predict(model, features, shots, seed) == targets))


def confusion_matrix(predicted: Sequence[int], actual: Sequence[int], n_classes: int) -> npt.NDArray[np.int64]:
    """Counts indexed [actual, predicted]."""
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(actual), np.asarray(predicted)), 1)
    return matrix


def fitness(
    genome: Genome,
    data: "Dataset",
    cfg: TrainConfig,
    encoder_cfg: TransformerConfig,
    seed: int,
) -> tuple[float, int]:
    """(validation accuracy after inner training, gate count) for a fresh model.

    Errors propagate; the search turns them into worst-fitness entries.
    """
    model = init_model(genome, data.n_features, data.n_classes, encoder_cfg, seed)
    train(model, data, replace(cfg, seed=seed), epochs=cfg.inner_epochs)
    score = accuracy(model, data.validation_x, data.validation_y)
    return score, gate_count(genome)


def dump_model(model: HybridModel) -> bytes:
    """Single-file checkpoint: header, encoder record, theta."""
    encoder_bytes = dump_encoder(model.encoder)
    header = json.dumps(
        {
            "genome": model.genome.to_text(),
            "n_classes": model.n_classes,
            "temperature": model.temperature,
            "n_theta": int(model.theta.value.size),
            "encoder_bytes": len(encoder_bytes),
        },
        sort_keys=True,
    ).encode()
    return b"".join(
        [
            MODEL_MAGIC,
            struct.pack("<II", MODEL_VERSION, len(header)),
            header,
            encoder_bytes,
            np.ascontiguousarray(model.theta.value, dtype="<f8").tobytes(),
        ]
    )


def load_model_bytes(buf: bytes) -> HybridModel:
    if buf[:4] != MODEL_MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    if len(buf) < 12:
        raise FormatError("truncated model checkpoint")
    version, header_len = struct.unpack("<II", buf[4:12])
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model checkpoint version {version}")
    start = 12 + header_len
    try:
        meta = json.loads(buf[12:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}") from e
    end = start + int(meta["encoder_bytes"])
    n_theta = int(meta["n_theta"])
    if len(buf) != end + 8 * n_theta:
        raise FormatError("truncated model checkpoint")
    encoder = load_encoder(buf[start:end])
    theta = np.frombuffer(buf[end:], dtype="<f8").astype(np.float64)
    return HybridModel(
        encoder,
        parse_genome(meta["genome"]),
        ad.parameter(theta, name="theta"),
        int(meta["n_classes"]),
        float(meta["temperature"]),
    )


def save_model(model: HybridModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_model(model))


def load_model(path: Path) -> HybridModel:
    return load_model_bytes(Path(path).read_bytes())
