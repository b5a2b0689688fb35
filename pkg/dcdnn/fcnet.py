"""
Fully connected prediction networks

Dense layers with PReLU activations, the regularised squared-error loss,
analytic gradients, SGD with momentum, and the binary model/bank formats.
Everything is plain numpy in double precision.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dcdnn.errors import DataError, FormatError, ShapeError, TrainingAborted, UsageError, ConfigurationError
from dcdnn.seeding import GENERATOR_ID, make_rng

logger = logging.getLogger(__name__)

BLOCK_SIZES = (4, 8, 16, 32)
DEFAULT_VALUE_SCALE = 1.0 / 255.0

# Reference vector ordering (corner block, rows above, columns left).
# Stored in model and dataset headers; bump when the ordering changes.
LAYOUT_VERSION = 1

MODEL_MAGIC = b"DCDN"
MODEL_VERSION = 1
BANK_MAGIC = b"DCDB"
BANK_VERSION = 1

_DTYPE_TAGS = {"float64": 1, "float32": 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}
_MODEL_HEADER = struct.Struct("<4sIIIIIBIdQH")


def input_dim(block_size: int, ref_lines: int) -> int:
    """Length of the reference vector: 4NL + L^2"""
    return 4 * block_size * ref_lines + ref_lines * ref_lines


# ============================================================
# TYPES
# ============================================================

@dataclass(eq=False)
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    prelu_slopes: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        if self.prelu_slopes is None:
            return [self.weights, self.bias]
        return [self.weights, self.bias, self.prelu_slopes]

    def copy(self) -> "LayerParams":
        return LayerParams(
            self.weights.copy(),
            self.bias.copy(),
            None if self.prelu_slopes is None else self.prelu_slopes.copy(),
        )

    def zeros_like(self) -> "LayerParams":
        return LayerParams(
            np.zeros_like(self.weights),
            np.zeros_like(self.bias),
            None if self.prelu_slopes is None else np.zeros_like(self.prelu_slopes),
        )


@dataclass(eq=False)
class Network:
    """One prediction mode for one block size"""

    block_size: int
    ref_lines: int
    depth: int
    hidden_dim: int
    layers: List[LayerParams]
    seed: int = 0
    generator: str = GENERATOR_ID
    value_scale: float = DEFAULT_VALUE_SCALE
    store_dtype: str = "float64"
    layout_version: int = LAYOUT_VERSION

    @property
    def input_dim(self) -> int:
        return input_dim(self.block_size, self.ref_lines)

    @property
    def output_dim(self) -> int:
        return self.block_size * self.block_size

    def copy(self) -> "Network":
        return Network(
            self.block_size, self.ref_lines, self.depth, self.hidden_dim,
            [layer.copy() for layer in self.layers],
            self.seed, self.generator, self.value_scale, self.store_dtype, self.layout_version,
        )

    def parameters(self) -> List[np.ndarray]:
        """All parameter arrays in storage order (W, b, a per layer)"""
        return [arr for layer in self.layers for arr in layer.arrays()]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for arr in self.parameters())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        header = (self.block_size, self.ref_lines, self.depth, self.hidden_dim, self.seed,
                  self.generator, self.value_scale, self.store_dtype, self.layout_version)
        other_header = (other.block_size, other.ref_lines, other.depth, other.hidden_dim, other.seed,
                        other.generator, other.value_scale, other.store_dtype, other.layout_version)
        if header != other_header or len(self.layers) != len(other.layers):
            return False
        for mine, theirs in zip(self.layers, other.layers):
            if (mine.prelu_slopes is None) != (theirs.prelu_slopes is None):
                return False
            for a, b in zip(mine.arrays(), theirs.arrays()):
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True


@dataclass(eq=False)
class ForwardCache:
    """Per-layer inputs, pre-activations and outputs of one forward pass"""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    post: List[np.ndarray] = field(default_factory=list)


@dataclass(eq=False)
class Gradients:
    layers: List[LayerParams]

    def arrays(self) -> List[np.ndarray]:
        return [arr for layer in self.layers for arr in layer.arrays()]


@dataclass(eq=False)
class OptimizerState:
    momentum_buffers: List[LayerParams]
    momentum: float = 0.9
    weight_decay: float = 1e-4

    @classmethod
    def for_network(cls, net: Network, momentum: float = 0.9, weight_decay: float = 1e-4) -> "OptimizerState":
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
        return cls([layer.zeros_like() for layer in net.layers], momentum, weight_decay)


# ============================================================
# CONSTRUCTION
# ============================================================

def init_network(block_size: int, ref_lines: int, hidden_dim: int, depth: int, seed: int,
                 unit_init: bool = False, value_scale: float = DEFAULT_VALUE_SCALE) -> Network:
    """
    Build a fresh network: D PReLU layers of width hidden_dim and a final
    affine layer of N^2 outputs.

    Weights are Gaussian with std 1/sqrt(fan_in) (std 1 with unit_init),
    biases start at 0 and PReLU slopes at 0.25.
    """
    if block_size not in BLOCK_SIZES:
        raise ConfigurationError(f"block size must be one of {BLOCK_SIZES}, got {block_size}")
    if ref_lines < 1 or hidden_dim < 1 or depth < 1:
        raise ConfigurationError(
            f"ref_lines, hidden_dim and depth must be >= 1 (got {ref_lines}, {hidden_dim}, {depth})"
        )
    if not value_scale > 0:
        raise ConfigurationError(f"value_scale must be positive, got {value_scale}")

    rng = make_rng(seed)
    dims = [input_dim(block_size, ref_lines)] + [hidden_dim] * depth + [block_size * block_size]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        std = 1.0 if unit_init else 1.0 / np.sqrt(fan_in)
        weights = rng.standard_normal((fan_out, fan_in)) * std
        bias = np.zeros(fan_out)
        slopes = np.full(fan_out, 0.25) if i < depth else None
        layers.append(LayerParams(weights, bias, slopes))

    return Network(block_size, ref_lines, depth, hidden_dim, layers, seed=int(seed),
                   value_scale=float(value_scale))


def parameter_count(net: Network) -> int:
    return int(sum(arr.size for arr in net.parameters()))


def model_nbytes(net: Network, dtype: Optional[str] = None) -> int:
    """Size of the serialized model in bytes"""
    itemsize = np.dtype(dtype or net.store_dtype).itemsize
    return _MODEL_HEADER.size + len(net.generator.encode("ascii")) + parameter_count(net) * itemsize


# ============================================================
# INFERENCE
# ============================================================

def prelu(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.shape[-1:] != a.shape:
        raise ShapeError(f"prelu: input has {x.shape[-1:]} components but {a.shape} slopes")
    return np.where(x >= 0, x, a * x)


def forward(net: Network, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on one reference vector or a batch of them (rows).

    Returns the output and the cache backward() needs.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("network input contains non-finite values")

    cache = ForwardCache()
    out = x
    for layer in net.layers:
        cache.inputs.append(out)
        z = out @ layer.weights.T + layer.bias
        cache.pre.append(z)
        out = z if layer.prelu_slopes is None else np.where(z >= 0, z, layer.prelu_slopes * z)
        cache.post.append(out)
    return out, cache


def predict_block(net: Network, ref_vectors: np.ndarray) -> np.ndarray:
    """Prediction in zero-centred pixel units for reference vectors in pixel units"""
    out, _ = forward(net, np.asarray(ref_vectors, dtype=np.float64) * net.value_scale)
    return out / net.value_scale


def squared_norm(net: Network) -> float:
    return float(sum(np.sum(arr * arr) for arr in net.parameters()))


def data_loss(net: Network, refs: np.ndarray, targets: np.ndarray) -> float:
    """(1/2M) sum ||F(x_j) - y_j||^2 in network units"""
    scale = net.value_scale
    out, _ = forward(net, np.atleast_2d(refs) * scale)
    diff = out - np.atleast_2d(targets) * scale
    return float(np.sum(diff * diff) / (2.0 * diff.shape[0]))


def batch_loss(net: Network, batch: Sequence, gamma: float) -> float:
    """Regularised loss over a batch of TrainSamples"""
    if len(batch) == 0:
        raise UsageError("batch_loss needs at least one sample")
    for sample in batch:
        if sample.block_size != net.block_size or sample.ref_lines != net.ref_lines:
            raise UsageError(
                f"sample is {sample.block_size}x{sample.block_size}/L={sample.ref_lines}, "
                f"network is {net.block_size}x{net.block_size}/L={net.ref_lines}"
            )
    refs = np.stack([s.ref_vector for s in batch])
    targets = np.stack([s.target for s in batch])
    return data_loss(net, refs, targets) + 0.5 * gamma * squared_norm(net)


# ============================================================
# TRAINING
# ============================================================


def backward(net: Network, cache: ForwardCache, target: np.ndarray, gamma: float) -> Gradients:
    """
    Gradients of (1/2M) sum ||F - y||^2 + (gamma/2) ||Theta||^2.

    For a single-vector cache M is 1. PReLU slopes only receive gradient
    through negative pre-activations.
    """
    if len(cache.pre) != len(net.layers) or any(
        z.shape[-1] != layer.weights.shape[0] for z, layer in zip(cache.pre, net.layers)
    ):
        raise UsageError("forward cache does not belong to this network")

    output = cache.post[-1]
    y = np.asarray(target, dtype=np.float64)
    if y.shape != output.shape:
        raise ShapeError(f"target shape {y.shape} does not match output shape {output.shape}")

    single = output.ndim == 1

    def rows(arr):
        return arr[None, :] if single else arr

    delta = rows(output - y)
    if not single:
        delta = delta / output.shape[0]

    grads: List[Optional[LayerParams]] = [None] * len(net.layers)
    slope_terms: List[Optional[np.ndarray]] = [None] * len(net.layers)

    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        d_weights = delta.T @ rows(cache.inputs[i]) + gamma * layer.weights
        d_bias = delta.sum(axis=0) + gamma * layer.bias
        d_slopes = None
        if layer.prelu_slopes is not None:
            d_slopes = slope_terms[i] + gamma * layer.prelu_slopes
        grads[i] = LayerParams(d_weights, d_bias, d_slopes)

        if i == 0:
            break
        upstream = delta @ layer.weights
        below = net.layers[i - 1]
        z = rows(cache.pre[i - 1])
        negative = z < 0
        slope_terms[i - 1] = np.sum(np.where(negative, upstream * z, 0.0), axis=0)
        delta = np.where(negative, upstream * below.prelu_slopes, upstream)

    return Gradients(grads)


def sgd_step(net: Network, grads: Gradients, state: OptimizerState, lr: float) -> Tuple[Network, OptimizerState]:
    """
    Classic momentum update, in place: v <- mu*v + g; theta <- theta - lr*v
    """
    if lr < 0:
        raise UsageError(f"learning rate must be >= 0, got {lr}")
    for index, layer_grads in enumerate(grads.layers):
        for name, arr in zip(("weights", "bias", "prelu_slopes"), layer_grads.arrays()):
            if not np.all(np.isfinite(arr)):
                bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
                raise TrainingAborted(
                    f"non-finite gradient in layer {index} {name} ({bad} of {arr.size} entries); "
                    f"lr={lr}, parameter RMS={float(np.sqrt(np.mean(getattr(net.layers[index], name) ** 2))):.4g}"
                )

    for layer, buffers, layer_grads in zip(net.layers, state.momentum_buffers, grads.layers):
        for param, buf, grad in zip(layer.arrays(), buffers.arrays(), layer_grads.arrays()):
            buf *= state.momentum
            buf += grad
            param -= lr * buf
    return net, state


# ============================================================
# MODEL FILES
# ============================================================

def save_model(net: Network) -> bytes:
    """
    Little-endian model blob: header (magic, version, N, L, D, hidden,
    element type, layout version, value scale, seed, generator id) followed
    by each layer's row-major weights, bias and (hidden layers) slopes.
    """
    if net.store_dtype not in _DTYPE_TAGS:
        raise ConfigurationError(f"unsupported store dtype {net.store_dtype}")
    generator = net.generator.encode("ascii")
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, net.block_size, net.ref_lines, net.depth, net.hidden_dim,
        _DTYPE_TAGS[net.store_dtype], net.layout_version, net.value_scale, net.seed, len(generator),
    )
    dtype = np.dtype(net.store_dtype).newbyteorder("<")
    body = b"".join(np.ascontiguousarray(arr, dtype=dtype).tobytes() for arr in net.parameters())
    return header + generator + body


def load_model(blob: bytes) -> Network:
    if len(blob) < _MODEL_HEADER.size:
        raise FormatError(f"model blob truncated: {len(blob)} bytes is shorter than the header")
    (magic, version, block_size, ref_lines, depth, hidden_dim, dtype_tag,
     layout_version, value_scale, seed, generator_len) = _MODEL_HEADER.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model format version {version} (this build reads version {MODEL_VERSION})")
    if dtype_tag not in _TAG_DTYPES:
        raise FormatError(f"unknown element type tag {dtype_tag}")
    if layout_version != LAYOUT_VERSION:
        raise FormatError(f"model uses reference layout v{layout_version}, this build uses v{LAYOUT_VERSION}")
    if block_size not in BLOCK_SIZES or ref_lines < 1 or depth < 1 or hidden_dim < 1:
        raise FormatError(f"implausible model dimensions N={block_size} L={ref_lines} D={depth} hidden={hidden_dim}")

    offset = _MODEL_HEADER.size
    generator = blob[offset:offset + generator_len]
    if len(generator) != generator_len:
        raise FormatError("model blob truncated inside the generator id")
    offset += generator_len

    store_dtype = _TAG_DTYPES[dtype_tag]
    dtype = np.dtype(store_dtype).newbyteorder("<")
    dims = [input_dim(block_size, ref_lines)] + [hidden_dim] * depth + [block_size * block_size]

    def take(count):
        nonlocal offset
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise FormatError(f"model blob truncated at byte {offset} (needs {nbytes} more)")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).astype(np.float64)
        offset += nbytes
        return arr

    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights = take(fan_in * fan_out).reshape(fan_out, fan_in)
        bias = take(fan_out)
        slopes = take(fan_out) if i < depth else None
        layers.append(LayerParams(weights, bias, slopes))
    if offset != len(blob):
        raise FormatError(f"model blob has {len(blob) - offset} trailing bytes")

    return Network(block_size, ref_lines, depth, hidden_dim, layers, seed=seed,
                   generator=generator.decode("ascii"), value_scale=value_scale,
                   store_dtype=store_dtype, layout_version=layout_version)


# ============================================================
# BANK FILES (K modes x one network per block size)
# ============================================================

ModeBank = Dict[int, Network]
_BANK_HEADER = struct.Struct("<4sIII")


def save_bank(banks: Sequence[ModeBank]) -> bytes:
    if not banks:
        raise UsageError("cannot save an empty bank")
    sizes = sorted(banks[0])
    for k, bank in enumerate(banks):
        if sorted(bank) != sizes:
            raise UsageError(f"mode {k} covers block sizes {sorted(bank)}, mode 0 covers {sizes}")
    parts = [_BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, len(banks), len(sizes)),
             struct.pack(f"<{len(sizes)}I", *sizes)]
    for bank in banks:
        for size in sizes:
            blob = save_model(bank[size])
            parts.append(struct.pack("<Q", len(blob)))
            parts.append(blob)
    return b"".join(parts)


def load_bank(blob: bytes) -> List[ModeBank]:
    if len(blob) < _BANK_HEADER.size:
        raise FormatError("bank file truncated before the header ends")
    magic, version, modes, size_count = _BANK_HEADER.unpack_from(blob, 0)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}, expected {BANK_MAGIC!r}")
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank format version {version} (this build reads version {BANK_VERSION})")
    offset = _BANK_HEADER.size
    if offset + 4 * size_count > len(blob):
        raise FormatError("bank file truncated inside the size table")
    sizes = struct.unpack_from(f"<{size_count}I", blob, offset)
    offset += 4 * size_count

    banks = []
    for _ in range(modes):
        bank = {}
        for size in sizes:
            if offset + 8 > len(blob):
                raise FormatError("bank file truncated before a model length")
            (length,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            if offset + length > len(blob):
                raise FormatError("bank file truncated inside a model")
            net = load_model(blob[offset:offset + length])
            offset += length
            if net.block_size != size:
                raise FormatError(f"bank slot for N={size} holds a N={net.block_size} model")
            bank[size] = net
        banks.append(bank)
    if offset != len(blob):
        raise FormatError(f"bank file has {len(blob) - offset} trailing bytes")
    return banks


def write_bank(banks: Sequence[ModeBank], path: str) -> None:
    with open(path, "wb") as f:
        f.write(save_bank(banks))


def read_bank(path: str) -> List[ModeBank]:
    with open(path, "rb") as f:
        return load_bank(f.read())
