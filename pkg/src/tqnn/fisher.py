"""Empirical Fisher spectrum of the joint (encoder, theta) parameter vector.

With k gradient samples the empirical Fisher F = G G^T (G = [g_1 .. g_k]/sqrt(k))
has rank <= k, so its nonzero spectrum is recovered from the k x k Gram
matrix G^T G and lifted back with u = G v / sqrt(lambda).
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NumericalError
from .hybrid import HybridModel, accumulate_sample_grad, forward

if TYPE_CHECKING:
    from .data import Dataset

LABEL_MODES = ("model", "data")
NORM_TOLERANCE = 1e-10
TAU_OVERFLOW = 1e150


@dataclass
class FisherConfig:
    """Sample count, number of reported eigenpairs and label source."""

    k_samples: int = 256
    top_k: int = 10
    label_mode: str = "model"
    seed: int = 0

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        if self.top_k < 1:
            errors.append(f"top_k must be >= 1: {self.top_k}")
        if self.k_samples < self.top_k:
            errors.append(f"k_samples ({self.k_samples}) must be >= top_k ({self.top_k})")
        if self.label_mode not in LABEL_MODES:
            errors.append(f"label_mode must be one of {LABEL_MODES}: {self.label_mode!r}")
        return errors


@dataclass
class FisherReport:
    eigenvalues: Tensor
    energy_splits: list[tuple[float, float]]
    block_sizes: tuple[int, int]
    eigenvectors: Tensor = field(repr=False)
    trace: float = 0.0
    clamped: int = 0
    k_samples: int = 0

    @property
    def decay_ratio(self) -> float:
        """Smallest reported eigenvalue over the largest."""
        top = float(self.eigenvalues[0])
        return float(self.eigenvalues[-1]) / top if top > 0 else 0.0


def jacobi_eigh(
    matrix: Tensor,
    tol: float = 1e-14,
    max_sweeps: int = 60,
) -> tuple[Tensor, Tensor]:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Returns (eigenvalues descending, eigenvectors as columns).
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"jacobi_eigh needs a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ContractError("jacobi_eigh needs a symmetric matrix")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)

    for _ in range(max_sweeps):
        # Off-diagonal Frobenius norm from the upper triangle
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(tau) > TAU_OVERFLOW:
                    t = 1.0 / (2.0 * tau)
                elif tau >= 0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c

                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def _logprob_grad(model: HybridModel, x: Sequence[float], y: int) -> tuple[Tensor, bool]:
    ad.zero_grad(model.parameters())
    outcome = accumulate_sample_grad(model, x, y, weight=-1.0)
    return model.flat_grads(), outcome.clamped


def logprob_grad(model: HybridModel, x: Sequence[float], y: int) -> Tensor:
    """Flat gradient of log p(y|x), encoder block first, theta block last."""
    grad, _ = _logprob_grad(model, x, y)
    return grad


def energy_split(u: Tensor, boundary: int) -> tuple[float, float]:
    """(transformer share, circuit share) of a unit vector's squared mass."""
    vec = np.asarray(u, dtype=np.float64).ravel()
    if not 0 <= boundary <= vec.size:
        raise ContractError(f"block boundary {boundary} outside [0, {vec.size}]")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ContractError(f"energy split needs a unit vector, got norm {norm:.12g}")
    t_share = float(np.sum(vec[:boundary] ** 2))
    t_share = min(1.0, max(0.0, t_share))
    return t_share, 1.0 - t_share


@dataclass
class GradientSamples:
    matrix: Tensor
    clamped: int


def gradient_matrix(model: HybridModel, data: "Dataset", cfg: FisherConfig) -> GradientSamples:
    """G = [g_1 .. g_k] / sqrt(k) over rows drawn from the training split."""
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    features, labels = data.train_x, data.train_y
    if len(labels) == 0:
        raise ContractError("no training rows to draw Fisher samples from")

    rng = np.random.default_rng(cfg.seed)
    rows = rng.choice(len(labels), size=cfg.k_samples, replace=len(labels) < cfg.k_samples)
    columns = []
    clamped = 0
    for row in rows:
        x = features[row]
        if cfg.label_mode == "model":
            y = int(rng.choice(model.n_classes, p=forward(model, x)))
        else:
            y = int(labels[row])
        grad, was_clamped = _logprob_grad(model, x, y)
        columns.append(grad)
        clamped += int(was_clamped)
    matrix = np.stack(columns, axis=1) / math.sqrt(cfg.k_samples)
    return GradientSamples(matrix, clamped)


def fisher_matvec(g: Tensor, vec: Tensor) -> Tensor:
    """F v = G (G^T v) without forming F."""
    return g @ (g.T @ vec)


def lift_eigenvectors(g: Tensor, gram_vectors: Tensor, eigenvalues: Tensor) -> Tensor:
    """Map Gram eigenvectors to unit parameter-space eigenvectors."""
    lifted = g @ gram_vectors
    floor = 1e-14 * max(float(eigenvalues.max(initial=0.0)), 1e-300)
    out = np.empty_like(lifted)
    for i, lam in enumerate(eigenvalues):
        col = lifted[:, i] / math.sqrt(lam) if lam > floor else lifted[:, i]
        norm = float(np.linalg.norm(col))
        if norm > 0.0:
            out[:, i] = col / norm
        else:
            out[:, i] = 1.0 / math.sqrt(col.size)
    return out


def spectrum_from_gradients(g: Tensor, top_k: int, boundary: int) -> FisherReport:
    """Top-k eigenpairs of G G^T plus their energy splits."""
    if g.ndim != 2 or g.shape[1] < 1:
        raise ContractError(f"gradient matrix must be D x k with k >= 1, got {g.shape}")
    if top_k > g.shape[1]:
        raise ContractError(f"top_k ({top_k}) exceeds sample count ({g.shape[1]})")
    gram = g.T @ g
    values, vectors = jacobi_eigh(gram)
    values = np.maximum(values[:top_k], 0.0)
    lifted = lift_eigenvectors(g, vectors[:, :top_k], values)
    splits = [energy_split(lifted[:, i], boundary) for i in range(top_k)]
    d = g.shape[0]
    return FisherReport(
        eigenvalues=values,
        energy_splits=splits,
        block_sizes=(boundary, d - boundary),
        eigenvectors=lifted,
        trace=float(np.trace(gram)),
        k_samples=g.shape[1],
    )


def empirical_fisher_eigs(model: HybridModel, data: "Dataset", cfg: FisherConfig) -> FisherReport:
    """Top ``cfg.top_k`` eigenpairs of the empirical Fisher of ``model``."""
    if cfg.k_samples < 1:
        raise ContractError(f"k_samples must be >= 1: {cfg.k_samples}")
    samples = gradient_matrix(model, data, cfg)
    report = spectrum_from_gradients(samples.matrix, cfg.top_k, model.block_sizes[0])
    report.clamped = samples.clamped
    return report


def _fmt(value: float) -> str:
    return "%.12g" % value


def write_report_csv(report: FisherReport, path: Path) -> None:
    """eig_index,eigenvalue,t_share,q_share, one row per eigenpair."""
    lines = ["eig_index,eigenvalue,t_share,q_share"]
    for i, (lam, (t_share, q_share)) in enumerate(zip(report.eigenvalues, report.energy_splits)):
        lines.append(f"{i},{_fmt(lam)},{_fmt(t_share)},{_fmt(q_share)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def write_spectrum(report: FisherReport, path: Path) -> None:
    """Whitespace-separated spectrum for plotting tools."""
    lines = [
        f"# trace {_fmt(report.trace)} samples {report.k_samples} clamped {report.clamped}"
        f" blocks {report.block_sizes[0]} {report.block_sizes[1]}",
        "# index eigenvalue log10_eigenvalue t_share q_share",
    ]
    for i, (lam, (t_share, q_share)) in enumerate(zip(report.eigenvalues, report.energy_splits)):
        log_lam = math.log10(lam) if lam > 0 else float("-inf")
        lines.append(f"{i} {_fmt(lam)} {_fmt(log_lam)} {_fmt(t_share)} {_fmt(q_share)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_report_csv(path: Path) -> list[tuple[int, float, float, float]]:
    """Rows of a report CSV as (index, eigenvalue, t_share, q_share)."""
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        if not line.strip():
            continue
        index, lam, t_share, q_share = line.split(",")
        rows.append((int(index), float(lam), float(t_share), float(q_share)))
    return rows
