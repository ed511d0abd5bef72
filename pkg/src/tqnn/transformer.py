"""Transformer front-end: raw features -> n_qubits rotation angles.

Pipeline per sample: tokenize -> linear token embedding -> add sinusoidal
positional encoding -> L encoder layers (multi-head scaled dot-product
attention + residual, position-wise ReLU FFN + residual) -> mean over the
sequence -> linear head to ``n_qubits`` values -> ``pi * tanh``.
"""

import json
import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import GraphNode, Tensor
from .errors import ConfigError, ContractError, FormatError

TOKEN_MODES = ("scalar", "patch")

ENCODER_MAGIC = b"GTQ1"
ENCODER_VERSION = 1


@dataclass
class TransformerConfig:
    """Sizes of the encoder. Defaults keep the Fisher parameter count small."""

    d_model: int = 16
    n_heads: int = 2
    n_layers: int = 1
    d_ff: int = 32
    n_qubits: int = 3
    token_mode: str = "scalar"
    patch_size: int = 4
    seed: int = 0

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = []
        if self.d_model < 1 or self.n_heads < 1:
            errors.append(f"d_model and n_heads must be positive: {self.d_model}, {self.n_heads}")
        elif self.d_model % self.n_heads != 0:
            errors.append(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.n_layers < 0:
            errors.append(f"n_layers must be >= 0: {self.n_layers}")
        if self.d_ff < 1:
            errors.append(f"d_ff must be positive: {self.d_ff}")
        if self.n_qubits < 1:
            errors.append(f"n_qubits must be positive: {self.n_qubits}")
        elif self.n_qubits > self.d_model:
            errors.append(f"n_qubits ({self.n_qubits}) cannot exceed d_model ({self.d_model})")
        if self.token_mode not in TOKEN_MODES:
            errors.append(f"token_mode must be one of {TOKEN_MODES}: {self.token_mode!r}")
        if self.token_mode == "patch" and self.patch_size < 1:
            errors.append(f"patch_size must be positive: {self.patch_size}")
        return errors


def token_layout(n_features: int, cfg: TransformerConfig) -> tuple[int, int]:
    """Return (sequence length, token dimension) for an input of ``n_features``."""
    if n_features < 1:
        raise FormatError("empty input vector")
    if cfg.token_mode == "scalar":
        return n_features, 1
    side = math.isqrt(n_features)
    if side * side != n_features:
        raise FormatError(f"patch mode needs a square image, got {n_features} values")
    p = cfg.patch_size
    if side % p != 0:
        raise FormatError(f"image side {side} is not divisible by patch size {p}")
    return (side // p) ** 2, p * p


def tokenize(x: Sequence[float], cfg: TransformerConfig) -> Tensor:
    """Split a raw feature vector into a [T x token_dim] token matrix."""
    values = np.asarray(x, dtype=np.float64).ravel()
    seq_len, token_dim = token_layout(values.size, cfg)
    if cfg.token_mode == "scalar":
        return values.reshape(seq_len, 1)
    side = math.isqrt(values.size)
    p = cfg.patch_size
    blocks = side // p
    image = values.reshape(side, side)
    return image.reshape(blocks, p, blocks, p).transpose(0, 2, 1, 3).reshape(seq_len, token_dim)


def positional_encoding(seq_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal table, sin on even and cos on odd columns."""
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    freq = np.exp(-math.log(10000.0) * i / d_model)
    table = np.zeros((seq_len, d_model))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)[:, : d_model // 2]
    return table


class EncoderState:
    """Encoder weights plus the input layout they were built for."""

    def __init__(
        self,
        config: TransformerConfig,
        seq_len: int,
        token_dim: int,
        params: dict[str, GraphNode],
    ):
        self.config = config
        self.seq_len = seq_len
        self.token_dim = token_dim
        self.params = params
        self.pe_table = positional_encoding(seq_len, config.d_model)

    @property
    def n_features(self) -> int:
        if self.config.token_mode == "scalar":
            return self.seq_len
        return self.seq_len * self.token_dim

    def parameters(self) -> list[GraphNode]:
        """Trainable nodes in a fixed order (the Fisher block layout)."""
        return list(self.params.values())

    @property
    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def flat_values(self) -> Tensor:
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def __getitem__(self, name: str) -> GraphNode:
        return self.params[name]


def _param_shapes(cfg: TransformerConfig, token_dim: int) -> list[tuple[str, tuple[int, int]]]:
    d, dk = cfg.d_model, cfg.d_head
    shapes = [("embed.weight", (token_dim, d)), ("embed.bias", (1, d))]
    for layer in range(cfg.n_layers):
        for head in range(cfg.n_heads):
            for proj in ("query", "key", "value"):
                shapes.append((f"layer{layer}.head{head}.{proj}", (d, dk)))
        shapes += [
            (f"layer{layer}.out.weight", (d, d)),
            (f"layer{layer}.out.bias", (1, d)),
            (f"layer{layer}.ffn1.weight", (d, cfg.d_ff)),
            (f"layer{layer}.ffn1.bias", (1, cfg.d_ff)),
            (f"layer{layer}.ffn2.weight", (cfg.d_ff, d)),
            (f"layer{layer}.ffn2.bias", (1, d)),
        ]
    shapes += [("head.weight", (d, cfg.n_qubits)), ("head.bias", (1, cfg.n_qubits))]
    return shapes


def init_encoder(cfg: TransformerConfig, n_features: int) -> EncoderState:
    """Build an encoder for inputs of ``n_features`` values.

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn from the
    config seed; biases start at zero.
    """
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    seq_len, token_dim = token_layout(n_features, cfg)
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, GraphNode] = {}
    for name, shape in _param_shapes(cfg, token_dim):
        if name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = ad.parameter(value, name=name)
    return EncoderState(cfg, seq_len, token_dim, params)


def attention_layer(
    state: EncoderState,
    hidden: GraphNode,
    layer: int,
    capture: Optional[list[Tensor]] = None,
) -> GraphNode:
    """One encoder layer on a [T x d_model] node.

    If ``capture`` is given, each head's attention-weight matrix is appended.
    """
    cfg = state.config
    if hidden.shape != (hidden.shape[0], cfg.d_model):
        raise ContractError(f"hidden state must be [T x {cfg.d_model}], got {hidden.shape}")
    if not 0 <= layer < cfg.n_layers:
        raise ContractError(f"layer index {layer} out of range (n_layers={cfg.n_layers})")

    inv_sqrt_dk = 1.0 / math.sqrt(cfg.d_head)
    heads = []
    for head in range(cfg.n_heads):
        prefix = f"layer{layer}.head{head}"
        q = ad.matmul(hidden, state[f"{prefix}.query"])
        k = ad.matmul(hidden, state[f"{prefix}.key"])
        v = ad.matmul(hidden, state[f"{prefix}.value"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_dk)
        weights = ad.softmax_rows(scores)
        if capture is not None:
            capture.append(weights.value.copy())
        heads.append(ad.matmul(weights, v))

    mixed = ad.concat(heads, axis=1) if len(heads) > 1 else heads[0]
    projected = ad.add(ad.matmul(mixed, state[f"layer{layer}.out.weight"]), state[f"layer{layer}.out.bias"])
    hidden = ad.add(hidden, projected)

    ff = ad.relu(ad.add(ad.matmul(hidden, state[f"layer{layer}.ffn1.weight"]), state[f"layer{layer}.ffn1.bias"]))
    ff = ad.add(ad.matmul(ff, state[f"layer{layer}.ffn2.weight"]), state[f"layer{layer}.ffn2.bias"])
    return ad.add(hidden, ff)


def embed(x: Sequence[float], state: EncoderState) -> GraphNode:
    """Token embedding plus positional encoding, [T x d_model]."""
    tokens = tokenize(x, state.config)
    if tokens.shape != (state.seq_len, state.token_dim):
        raise FormatError(
            f"input has layout {tokens.shape}, encoder expects {(state.seq_len, state.token_dim)}"
        )
    hidden = ad.add(ad.matmul(ad.constant(tokens), state["embed.weight"]), state["embed.bias"])
    positions = ad.gather_rows(ad.constant(state.pe_table), range(tokens.shape[0]))
    return ad.add(hidden, positions)


def encode(
    x: Sequence[float],
    state: EncoderState,
    capture: Optional[list[Tensor]] = None,
) -> GraphNode:
    """Compress one sample to a [1 x n_qubits] node."""
    hidden = embed(x, state)
    for layer in range(state.config.n_layers):
        hidden = attention_layer(state, hidden, layer, capture)
    pooled = ad.mean(hidden, axis=0)
    return ad.add(ad.matmul(pooled, state["head.weight"]), state["head.bias"])


def to_angles(h: GraphNode) -> GraphNode:
    """Map encoder outputs to RY angles in (-pi, pi)."""
    return ad.scale(ad.tanh(h), math.pi)


def dump_encoder(state: EncoderState) -> bytes:
    """Serialize to the versioned binary record (magic GTQ1, little-endian)."""
    header = json.dumps(
        {"config": asdict(state.config), "seq_len": state.seq_len, "token_dim": state.token_dim},
        sort_keys=True,
    ).encode()
    parts = [ENCODER_MAGIC, struct.pack("<II", ENCODER_VERSION, len(header)), header]
    parts.append(struct.pack("<I", len(state.params)))
    for name, node in state.params.items():
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{node.value.ndim}I", node.value.ndim, *node.value.shape))
    for node in state.params.values():
        parts.append(np.ascontiguousarray(node.value, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated encoder record")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_encoder(buf: bytes) -> EncoderState:
    """Inverse of ``dump_encoder``."""
    reader = _Reader(buf)
    if reader.take(4) != ENCODER_MAGIC:
        raise FormatError("not an encoder record (bad magic)")
    version, header_len = reader.unpack("<II")
    if version != ENCODER_VERSION:
        raise FormatError(f"unsupported encoder record version {version}")
    meta = json.loads(reader.take(header_len).decode())
    cfg = TransformerConfig(**meta["config"])
    (count,) = reader.unpack("<I")
    layout = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        layout.append((name, shape))
    params: dict[str, GraphNode] = {}
    for name, shape in layout:
        size = int(np.prod(shape))
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
        params[name] = ad.parameter(values.reshape(shape), name=name)
    return EncoderState(cfg, int(meta["seq_len"]), int(meta["token_dim"]), params)
