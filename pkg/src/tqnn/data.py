"""Dataset loading, encoding and stratified splits.

CSV files are described by a YAML schema naming every column and its type:

- ``numeric``: parsed as float
- ``ignore``: skipped (e.g. record ids)
- ``ordinal``: index of the value in ``levels``
- ``onehot``: one indicator column per entry of ``levels``
- ``label``: class column; index in ``levels`` when given, else an integer
"""

import csv
import gzip
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
import yaml

from .autodiff import Tensor
from .errors import ConfigError, ContractError, FormatError, ParseError, StratificationError

IndexArray = npt.NDArray[np.int64]

DATASETS = ("iris", "breast_cancer", "heart", "mnist")
COLUMN_TYPES = ("numeric", "ignore", "ordinal", "onehot", "label")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_DIGITS = (1, 2, 3)


def _empty_index() -> IndexArray:
    return np.zeros(0, dtype=np.int64)


@dataclass
class Dataset:
    """Feature matrix, integer labels and (after splitting) row partitions."""

    name: str
    features: Tensor
    labels: IndexArray
    n_classes: int
    feature_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    train_idx: IndexArray = field(default_factory=_empty_index)
    test_idx: IndexArray = field(default_factory=_empty_index)
    val_idx: IndexArray = field(default_factory=_empty_index)
    feature_means: Optional[Tensor] = None
    feature_stds: Optional[Tensor] = None
    token_mode: str = "scalar"

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ContractError(f"features must be a matrix, got shape {self.features.shape}")
        if len(self.labels) != self.features.shape[0]:
            raise ContractError(
                f"{self.features.shape[0]} feature rows but {len(self.labels)} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def is_split(self) -> bool:
        return self.train_idx.size > 0 and self.test_idx.size > 0

    def class_counts(self, rows: Optional[IndexArray] = None) -> list[int]:
        labels = self.labels if rows is None else self.labels[rows]
        return [int(c) for c in np.bincount(labels, minlength=self.n_classes)]

    @property
    def train_x(self) -> Tensor:
        return self.features[self.train_idx]

    @property
    def train_y(self) -> IndexArray:
        return self.labels[self.train_idx]

    @property
    def test_x(self) -> Tensor:
        return self.features[self.test_idx]

    @property
    def test_y(self) -> IndexArray:
        return self.labels[self.test_idx]

    @property
    def validation_x(self) -> Tensor:
        """Rows used for fitness: the validation split, or the test split without one."""
        return self.features[self.val_idx if self.val_idx.size else self.test_idx]

    @property
    def validation_y(self) -> IndexArray:
        return self.labels[self.val_idx if self.val_idx.size else self.test_idx]


@dataclass
class ColumnSpec:
    name: str
    type: str
    levels: list[str] = field(default_factory=list)

    def width(self) -> int:
        """Number of feature columns this column expands to."""
        if self.type == "numeric" or self.type == "ordinal":
            return 1
        if self.type == "onehot":
            return len(self.levels)
        return 0


@dataclass
class Schema:
    """Column layout of a CSV dataset."""

    name: str
    columns: list[ColumnSpec]
    label: str
    header: bool = True

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            errors.append("duplicate column names")
        labels = [c for c in self.columns if c.type == "label"]
        if len(labels) != 1 or labels[0].name != self.label:
            errors.append(f"schema needs exactly one label column named {self.label!r}")
        for col in self.columns:
            if col.type not in COLUMN_TYPES:
                errors.append(f"column {col.name!r}: unknown type {col.type!r}")
            if col.type in ("ordinal", "onehot") and not col.levels:
                errors.append(f"column {col.name!r}: {col.type} needs levels")
        return errors

    @property
    def label_column(self) -> ColumnSpec:
        return next(c for c in self.columns if c.type == "label")

    def feature_names(self) -> list[str]:
        names = []
        for col in self.columns:
            if col.type == "onehot":
                names += [f"{col.name}={level}" for level in col.levels]
            elif col.width():
                names.append(col.name)
        return names


def _parse_schema_dict(data: dict[str, Any], origin: str) -> Schema:
    if not isinstance(data, dict) or not isinstance(data.get("columns"), list):
        raise FormatError(f"{origin}: schema needs a 'columns' list")
    columns = []
    for entry in data["columns"]:
        if not isinstance(entry, dict) or "name" not in entry or "type" not in entry:
            raise FormatError(f"{origin}: each column needs 'name' and 'type'")
        levels = [str(level) for level in entry.get("levels", [])]
        columns.append(ColumnSpec(str(entry["name"]), str(entry["type"]), levels))
    schema = Schema(
        name=str(data.get("name", origin)),
        columns=columns,
        label=str(data.get("label", "")),
        header=bool(data.get("header", True)),
    )
    errors = schema.validate()
    if errors:
        raise FormatError(f"{origin}: " + "; ".join(errors))
    return schema


def load_schema(path: Path) -> Schema:
    """Read a YAML schema file."""
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise FormatError(f"{path}: invalid YAML: {e}") from e
    return _parse_schema_dict(data, str(path))


def builtin_schema(name: str) -> Schema:
    """Schema shipped with the package (iris, breast_cancer, heart)."""
    resource = resources.files("tqnn.datasets").joinpath(f"{name}.yaml")
    if not resource.is_file():
        raise ConfigError(f"no built-in schema for dataset {name!r}")
    return _parse_schema_dict(yaml.safe_load(resource.read_text()), f"{name}.yaml")


def _encode_row(
    row: Sequence[str], schema: Schema, line: int
) -> tuple[list[float], str]:
    if len(row) != len(schema.columns):
        raise ParseError(f"expected {len(schema.columns)} fields, got {len(row)}", line)
    values: list[float] = []
    label = ""
    for raw, col in zip(row, schema.columns):
        text = raw.strip()
        if col.type == "ignore":
            continue
        if col.type == "label":
            label = text
        elif col.type == "numeric":
            try:
                values.append(float(text))
            except ValueError:
                raise ParseError(f"column {col.name!r}: non-numeric value {text!r}", line) from None
        else:
            if text not in col.levels:
                raise ParseError(f"column {col.name!r}: unknown level {text!r}", line)
            position = col.levels.index(text)
            if col.type == "ordinal":
                values.append(float(position))
            else:
                values += [1.0 if i == position else 0.0 for i in range(len(col.levels))]
    return values, label


def load_csv(path: Path, schema: Schema) -> Dataset:
    """Read a comma-separated file described by ``schema``."""
    label_col = schema.label_column
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for line, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if line == 1 and schema.header:
                names = [cell.strip() for cell in row]
                expected = [c.name for c in schema.columns]
                if names != expected:
                    raise ParseError(f"header {names} does not match schema columns {expected}", line)
                continue
            values, label = _encode_row(row, schema, line)
            if label_col.levels and label not in label_col.levels:
                raise ParseError(f"unknown class label {label!r}", line)
            rows.append(values)
            raw_labels.append(label)

    if not rows:
        raise FormatError(f"{path}: no data rows")
    if label_col.levels:
        class_names = list(label_col.levels)
        labels = [class_names.index(label) for label in raw_labels]
    else:
        try:
            labels = [int(label) for label in raw_labels]
        except ValueError as e:
            raise FormatError(f"{path}: labels must be integers without declared levels") from e
        class_names = [str(c) for c in range(max(labels) + 1)]
    return Dataset(
        name=schema.name,
        features=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        n_classes=len(class_names),
        feature_names=schema.feature_names(),
        class_names=class_names,
    )


def load_iris() -> Dataset:
    """The 150-row iris table embedded in the package."""
    schema = builtin_schema("iris")
    with resources.as_file(resources.files("tqnn.datasets").joinpath("iris.csv")) as path:
        return load_csv(path, schema)


def _open_idx(path: Path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return bytes(f.read())


def read_idx_images(path: Path) -> npt.NDArray[np.uint8]:
    """IDX image file (big-endian header, magic 0x00000803) as [count x rows x cols]."""
    buf = _open_idx(path)
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated IDX image header")
    magic, count, n_rows, n_cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic 0x{magic:08x}")
    if len(buf) - 16 != count * n_rows * n_cols:
        raise FormatError(f"{path}: expected {count * n_rows * n_cols} pixel bytes, got {len(buf) - 16}")
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, n_rows, n_cols)


def read_idx_labels(path: Path) -> npt.NDArray[np.uint8]:
    """IDX label file (magic 0x00000801)."""
    buf = _open_idx(path)
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic 0x{magic:08x}")
    if len(buf) - 8 != count:
        raise FormatError(f"{path}: expected {count} labels, got {len(buf) - 8}")
    return np.frombuffer(buf, dtype=np.uint8, offset=8)


def _read_digits(
    image_path: Path, label_path: Path, digits: Sequence[int]
) -> tuple[Tensor, IndexArray]:
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(images) != len(labels):
        raise FormatError(
            f"{image_path} has {len(images)} images but {label_path} has {len(labels)} labels"
        )
    keep = np.isin(labels, digits)
    relabel = {d: i for i, d in enumerate(digits)}
    pixels = images[keep].reshape(int(keep.sum()), -1).astype(np.float64) / 255.0
    return pixels, np.array([relabel[int(d)] for d in labels[keep]], dtype=np.int64)


def allocate(counts: Sequence[int], total: int) -> list[int]:
    """Split ``total`` across classes proportionally (largest remainder)."""
    n = sum(counts)
    quotas = [total * c / n for c in counts]
    taken = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - taken[i]), i))
    for i in order[: total - sum(taken)]:
        taken[i] += 1
    return taken


def _stratified_pick(
    labels: IndexArray, rows: IndexArray, total: int, rng: np.random.Generator, n_classes: int
) -> IndexArray:
    """Choose ``total`` of ``rows`` preserving class ratios."""
    by_class = [rows[labels[rows] == c] for c in range(n_classes)]
    quota = allocate([len(r) for r in by_class], total)
    picked = [rng.permutation(members)[:k] for members, k in zip(by_class, quota)]
    return np.sort(np.concatenate(picked)).astype(np.int64)


def _split_size(frac: float, n: int) -> int:
    return int(math.ceil(round(frac * n, 9)))


def split_standardize(
    d: Dataset,
    test_frac: float = 0.2,
    seed: int = 0,
    validation_frac: float = 0.0,
    standardize: bool = True,
) -> Dataset:
    """Stratified train/test (optionally validation) split and train-fit z-scoring."""
    if not 0.0 < test_frac < 1.0:
        raise ConfigError(f"test_frac must be in (0, 1): {test_frac}")
    if not 0.0 <= validation_frac < 1.0 - test_frac:
        raise ConfigError(f"validation_frac must be in [0, {1.0 - test_frac}): {validation_frac}")
    counts = d.class_counts()
    for c, count in enumerate(counts):
        if 0 < count < 2:
            name = d.class_names[c] if c < len(d.class_names) else str(c)
            raise StratificationError(f"class {name!r} has {count} row(s); stratification needs 2")

    rng = np.random.default_rng(seed)
    everything = np.arange(d.n_rows, dtype=np.int64)
    test_idx = _stratified_pick(d.labels, everything, _split_size(test_frac, d.n_rows), rng, d.n_classes)
    rest = np.setdiff1d(everything, test_idx)
    val_idx = _empty_index()
    if validation_frac > 0.0:
        val_idx = _stratified_pick(d.labels, rest, _split_size(validation_frac, d.n_rows), rng, d.n_classes)
        rest = np.setdiff1d(rest, val_idx)
    if rest.size == 0:
        raise StratificationError("split leaves no training rows")

    features = d.features
    means = stds = None
    if standardize:
        means = features[rest].mean(axis=0)
        stds = features[rest].std(axis=0)
        stds = np.where(stds > 0.0, stds, 1.0)
        features = (features - means) / stds
    return replace(
        d,
        features=features,
        train_idx=rest.astype(np.int64),
        test_idx=test_idx,
        val_idx=val_idx,
        feature_means=means,
        feature_stds=stds,
    )


def load_mnist_subset(
    image_idx_path: Path,
    label_idx_path: Path,
    digits: Sequence[int] = MNIST_DIGITS,
    test_subsample: Optional[int] = 150,
    seed: int = 0,
    test_image_path: Optional[Path] = None,
    test_label_path: Optional[Path] = None,
    train_subsample: Optional[int] = None,
    test_frac: float = 0.2,
) -> Dataset:
    """Selected digits relabeled 0..len(digits)-1, pixels scaled to [0, 1].

    With a separate test file pair the first file is the training split;
    otherwise one file is split stratified by ``test_frac``. Both splits can
    be subsampled (stratified) to keep desk-scale runs short.
    """
    if len(set(digits)) != len(digits) or not digits:
        raise ConfigError(f"digits must be distinct and non-empty: {digits}")
    rng = np.random.default_rng(seed)
    pixels, labels = _read_digits(image_idx_path, label_idx_path, digits)
    n_classes = len(digits)

    if (test_image_path is None) != (test_label_path is None):
        raise ConfigError("test images and test labels must be given together")
    if test_image_path is not None and test_label_path is not None:
        test_pixels, test_labels = _read_digits(test_image_path, test_label_path, digits)
        train_idx = np.arange(len(labels), dtype=np.int64)
        test_idx = np.arange(len(labels), len(labels) + len(test_labels), dtype=np.int64)
        pixels = np.concatenate([pixels, test_pixels])
        labels = np.concatenate([labels, test_labels])
    else:
        raw = Dataset("mnist", pixels, labels, n_classes)
        split = split_standardize(raw, test_frac, seed, standardize=False)
        train_idx, test_idx = split.train_idx, split.test_idx

    if train_subsample is not None and train_subsample < len(train_idx):
        train_idx = _stratified_pick(labels, train_idx, train_subsample, rng, n_classes)
    if test_subsample is not None and test_subsample < len(test_idx):
        test_idx = _stratified_pick(labels, test_idx, test_subsample, rng, n_classes)

    side = int(math.isqrt(pixels.shape[1]))
    return Dataset(
        name="mnist",
        features=pixels,
        labels=labels,
        n_classes=n_classes,
        feature_names=[f"px{r}_{c}" for r in range(side) for c in range(side)],
        class_names=[str(d) for d in digits],
        train_idx=train_idx,
        test_idx=test_idx,
        token_mode="patch",
    )


@dataclass
class DataSource:
    """Where a dataset comes from and how it is split."""

    name: str = "iris"
    path: Optional[str] = None
    schema: Optional[str] = None
    mnist_images: Optional[str] = None
    mnist_labels: Optional[str] = None
    mnist_test_images: Optional[str] = None
    mnist_test_labels: Optional[str] = None
    train_subsample: Optional[int] = None
    test_subsample: Optional[int] = 150
    test_frac: float = 0.2
    validation_frac: float = 0.0

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        if self.name not in DATASETS:
            errors.append(f"unknown dataset {self.name!r}; choose from {', '.join(DATASETS)}")
        if self.name in ("breast_cancer", "heart") and not self.path:
            errors.append(f"dataset {self.name!r} needs a CSV path")
        if self.name == "mnist" and not (self.mnist_images and self.mnist_labels):
            errors.append("mnist needs IDX image and label paths")
        if not 0.0 < self.test_frac < 1.0:
            errors.append(f"test_frac must be in (0, 1): {self.test_frac}")
        if not 0.0 <= self.validation_frac < 1.0 - self.test_frac:
            errors.append(f"validation_frac must be in [0, 1 - test_frac): {self.validation_frac}")
        for label, value in (("train_subsample", self.train_subsample), ("test_subsample", self.test_subsample)):
            if value is not None and value < 1:
                errors.append(f"{label} must be >= 1: {value}")
        return errors


def load_source(src: DataSource, seed: int = 0) -> Dataset:
    """Load and split the dataset ``src`` describes."""
    errors = src.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    if src.name == "mnist":
        assert src.mnist_images is not None and src.mnist_labels is not None
        dataset = load_mnist_subset(
            Path(src.mnist_images),
            Path(src.mnist_labels),
            test_subsample=src.test_subsample,
            seed=seed,
            test_image_path=Path(src.mnist_test_images) if src.mnist_test_images else None,
            test_label_path=Path(src.mnist_test_labels) if src.mnist_test_labels else None,
            train_subsample=src.train_subsample,
            test_frac=src.test_frac,
        )
        if src.validation_frac > 0.0:
            rng = np.random.default_rng([seed, 2])
            total = _split_size(src.validation_frac, dataset.n_rows)
            val_idx = _stratified_pick(dataset.labels, dataset.train_idx, min(total, len(dataset.train_idx) - 1), rng, dataset.n_classes)
            dataset.train_idx = np.setdiff1d(dataset.train_idx, val_idx).astype(np.int64)
            dataset.val_idx = val_idx
        return dataset

    if src.name == "iris":
        raw = load_iris()
    else:
        assert src.path is not None
        schema = load_schema(Path(src.schema)) if src.schema else builtin_schema(src.name)
        raw = load_csv(Path(src.path), schema)
    return split_standardize(raw, src.test_frac, seed, src.validation_frac)
