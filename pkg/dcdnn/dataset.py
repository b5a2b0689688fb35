"""
Training data for the prediction networks

Turns 8-bit luma planes into (reference vector, target block) samples:
multi-line reference gathering, HEVC-style substitution of unavailable
references, zero-centering, prediction-unit tilings, the complexity filter
and the .dcds dataset file format.
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import png

from dcdnn.errors import ConfigurationError, FormatError, ShapeError, UsageError
from dcdnn.fcnet import BLOCK_SIZES, LAYOUT_VERSION, input_dim

logger = logging.getLogger(__name__)

MID_GRAY = 128

DATASET_MAGIC = b"DCDS"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIIIIQQ")
_GROUP_RECORD = struct.Struct("<qqqqqI")
_TU_RECORD = struct.Struct("<iii")


# ============================================================
# PLANES
# ============================================================

@dataclass(eq=False)
class Plane:
    width: int
    height: int
    samples: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.uint8).reshape(self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Plane):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and \
            np.array_equal(self.samples, other.samples)


def _pgm_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """Read `count` whitespace separated header tokens, skipping comments"""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("PGM header ends early")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def parse_pgm(data: bytes) -> Plane:
    if len(data) == 0:
        raise FormatError("empty image file")
    if not data.startswith(b"P5"):
        raise FormatError("only binary greyscale PGM (P5) is supported")
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, max_value = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError(f"malformed PGM header: {tokens!r}")
    if width <= 0 or height <= 0:
        raise FormatError(f"PGM has non-positive dimensions {width}x{height}")
    if max_value > 255:
        raise FormatError(f"PGM max value {max_value} means more than 8 bits per sample; only 8-bit is supported")
    raster = data[offset:offset + width * height]
    if len(raster) != width * height:
        raise FormatError(f"PGM raster truncated: {len(raster)} of {width * height} bytes")
    return Plane(width, height, np.frombuffer(raster, dtype=np.uint8).copy())


def _load_png(path: str) -> Plane:
    try:
        width, height, rows, info = png.Reader(filename=path).asDirect()
        pixels = np.vstack([np.asarray(row, dtype=np.uint16) for row in rows])
    except png.Error as e:
        raise FormatError(f"cannot decode PNG {path}: {e}")
    planes = info.get("planes", 1)
    pixels = pixels.reshape(height, width, planes).astype(np.float64)
    bitdepth = info.get("bitdepth", 8)
    if bitdepth != 8:
        pixels *= 255.0 / (2 ** bitdepth - 1)
    if info.get("alpha"):
        pixels = pixels[:, :, :-1]
    if pixels.shape[2] == 3:
        # BT.601 luma
        gray = pixels @ np.array([0.299, 0.587, 0.114])
    else:
        gray = pixels[:, :, 0]
    return Plane(width, height, np.clip(np.rint(gray), 0, 255).astype(np.uint8))


def load_plane(path: str) -> Plane:
    """Load an 8-bit P5 PGM, or a PNG converted to grey"""
    with open(path, "rb") as f:
        data = f.read()
    if data.startswith(b"\x89PNG"):
        return _load_png(path)
    return parse_pgm(data)


def write_pgm(plane: Plane, path: str) -> None:
    with open(path, "wb") as f:
        f.write(f"P5\n{plane.width} {plane.height}\n255\n".encode("ascii"))
        f.write(plane.samples.tobytes())


def read_manifest(path: str) -> List[str]:
    """One image path per line; relative paths resolve against the manifest"""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f]
    return [line if os.path.isabs(line) else os.path.join(base, line)
            for line in lines if line and not line.startswith("#")]


# ============================================================
# REFERENCE GEOMETRY
# ============================================================

@lru_cache(maxsize=None)
def reference_layout(block_size: int, ref_lines: int) -> Tuple[Tuple[int, int], ...]:
    """
    Canonical (dx, dy) order of the 4NL + L^2 reference positions:
    the LxL top-left corner block, then L rows above spanning 2N, then
    L columns left spanning 2N; row-major inside each region.
    """
    if ref_lines < 1:
        raise ConfigurationError(f"ref_lines must be >= 1, got {ref_lines}")
    n, l = block_size, ref_lines
    corner = [(dx, dy) for dy in range(-l, 0) for dx in range(-l, 0)]
    above = [(dx, dy) for dy in range(-l, 0) for dx in range(0, 2 * n)]
    left = [(dx, dy) for dy in range(0, 2 * n) for dx in range(-l, 0)]
    return tuple(corner + above + left)


@lru_cache(maxsize=None)
def _layout_arrays(block_size: int, ref_lines: int) -> Tuple[np.ndarray, np.ndarray]:
    offsets = np.array(reference_layout(block_size, ref_lines), dtype=np.int64)
    return offsets[:, 0], offsets[:, 1]


@lru_cache(maxsize=None)
def perimeter_scan(block_size: int, ref_lines: int) -> np.ndarray:
    """
    Substitution scan order as indices into reference_layout: line 1
    (nearest) to line L, each from the bottom of its left column up to the
    corner, then right along its top row.
    """
    index = {pos: i for i, pos in enumerate(reference_layout(block_size, ref_lines))}
    n = block_size
    order = []
    for line in range(1, ref_lines + 1):
        order.extend(index[(-line, dy)] for dy in range(2 * n - 1, -line - 1, -1))
        order.extend(index[(dx, -line)] for dx in range(-line + 1, 2 * n))
    return np.array(order, dtype=np.int64)


def substitute_unavailable(values: np.ndarray, availability: np.ndarray) -> np.ndarray:
    """
    HEVC reference substitution over a scan-ordered sequence: leading gaps
    take the first available value, later gaps repeat the previous sample,
    and an all-unavailable sequence becomes mid-grey.
    """
    values = np.asarray(values, dtype=np.float64)
    available = np.asarray(availability, dtype=bool)
    if values.shape != available.shape:
        raise ShapeError(f"{values.shape[0]} values but {available.shape[0]} availability flags")
    if not available.any():
        return np.full(values.shape, float(MID_GRAY))
    positions = np.where(available, np.arange(values.size), -1)
    source = np.maximum.accumulate(positions)
    source[source < 0] = int(np.argmax(available))
    return values[source]


def reference_availability(width: int, height: int, x: int, y: int, block_size: int,
                           ref_lines: int, causal: bool = True) -> np.ndarray:
    """
    In-plane test per layout position. With `causal`, only samples a raster
    scan of NxN blocks has already coded count: rows above the block row,
    and left columns alongside the block itself.
    """
    dx, dy = _layout_arrays(block_size, ref_lines)
    px, py = x + dx, y + dy
    available = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    if causal:
        available &= (py < y) | ((px < x) & (py < y + block_size))
    return available


def gather_references(plane: Plane, x: int, y: int, block_size: int, ref_lines: int,
                      causal: bool = True) -> np.ndarray:
    """Substituted reference values (pixel units) in layout order"""
    dx, dy = _layout_arrays(block_size, ref_lines)
    available = reference_availability(plane.width, plane.height, x, y, block_size, ref_lines, causal)
    px = np.clip(x + dx, 0, plane.width - 1)
    py = np.clip(y + dy, 0, plane.height - 1)
    raw = plane.samples[py, px].astype(np.float64)

    scan = perimeter_scan(block_size, ref_lines)
    filled = np.empty_like(raw)
    filled[scan] = substitute_unavailable(raw[scan], available[scan])
    return filled


# ============================================================
# SAMPLES
# ============================================================

@dataclass(eq=False)
class TrainSample:
    ref_vector: np.ndarray
    target: np.ndarray
    ref_mean: float
    origin: Tuple[int, int, int, int]  # (image id, x, y, N)
    ref_lines: int
    group_id: int = -1

    @property
    def block_size(self) -> int:
        return self.origin[3]

    def original_block(self) -> np.ndarray:
        n = self.block_size
        return (self.target + self.ref_mean).reshape(n, n)


def extract_sample(plane: Plane, x: int, y: int, block_size: int, ref_lines: int,
                   image_id: int = 0, group_id: int = -1, recon: Optional[Plane] = None,
                   causal: bool = True) -> TrainSample:
    """
    Zero-centred sample for the block at (x, y). References come from
    `recon` when given (a degraded/reconstructed plane), otherwise from
    the original plane.
    """
    n = block_size
    if x < 0 or y < 0 or x + n > plane.width or y + n > plane.height:
        raise UsageError(f"block {n}x{n} at ({x}, {y}) is outside the {plane.width}x{plane.height} plane")
    source = plane if recon is None else recon
    if (source.width, source.height) != (plane.width, plane.height):
        raise UsageError("reconstructed plane must match the original plane size")

    refs = gather_references(source, x, y, n, ref_lines, causal)
    mean = float(refs.mean())
    block = plane.samples[y:y + n, x:x + n].astype(np.float64).ravel()
    return TrainSample(refs - mean, block - mean, mean, (image_id, x, y, n), ref_lines, group_id)


@dataclass(eq=False)
class SampleSet:
    """Samples of one block size stacked into arrays"""

    block_size: int
    ref_lines: int
    refs: np.ndarray
    targets: np.ndarray
    means: np.ndarray
    group_ids: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        m = self.refs.shape[0]
        n2 = self.block_size * self.block_size
        if self.refs.shape != (m, input_dim(self.block_size, self.ref_lines)) or \
                self.targets.shape != (m, n2) or self.means.shape != (m,) or \
                self.group_ids.shape != (m,) or self.origins.shape != (m, 4):
            raise ShapeError(f"inconsistent sample arrays for N={self.block_size}, L={self.ref_lines}")

    def __len__(self) -> int:
        return self.refs.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[TrainSample]) -> "SampleSet":
        if not samples:
            raise UsageError("need at least one sample to build a SampleSet")
        sizes = {(s.block_size, s.ref_lines) for s in samples}
        if len(sizes) != 1:
            raise UsageError(f"samples mix block sizes / reference lines: {sorted(sizes)}")
        n, l = sizes.pop()
        return cls(n, l,
                   np.stack([s.ref_vector for s in samples]).astype(np.float64),
                   np.stack([s.target for s in samples]).astype(np.float64),
                   np.array([s.ref_mean for s in samples], dtype=np.float64),
                   np.array([s.group_id for s in samples], dtype=np.int64),
                   np.array([s.origin for s in samples], dtype=np.int64))

    def sample(self, i: int) -> TrainSample:
        return TrainSample(self.refs[i], self.targets[i], float(self.means[i]),
                           tuple(int(v) for v in self.origins[i]), self.ref_lines, int(self.group_ids[i]))

    def samples(self) -> List[TrainSample]:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, indices: np.ndarray) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(self.block_size, self.ref_lines, self.refs[indices], self.targets[indices],
                         self.means[indices], self.group_ids[indices], self.origins[indices])

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        first = parts[0]
        return cls(first.block_size, first.ref_lines,
                   np.concatenate([p.refs for p in parts]), np.concatenate([p.targets for p in parts]),
                   np.concatenate([p.means for p in parts]), np.concatenate([p.group_ids for p in parts]),
                   np.concatenate([p.origins for p in parts]))


# ============================================================
# PREDICTION GROUPS
# ============================================================

@dataclass(eq=False)
class PredictionGroup:
    """TUs that share one prediction mode (a PU and its TU tiling)"""

    group_id: int
    image_id: int
    x: int
    y: int
    pu_size: int
    tus: List[Tuple[int, int, int]]  # (dx, dy, N) relative to the PU
    members: List[Tuple[int, int]] = field(default_factory=list)  # (N, index in SampleSet)

    def geometry(self) -> Tuple:
        return (self.group_id, self.image_id, self.x, self.y, self.pu_size, tuple(self.tus))


def _mixed_tiling() -> List[Tuple[int, int, int]]:
    """64x64 PU: one 32x32, eight 16x16, fourteen 8x8 and eight 4x4 TUs"""
    tus = [(0, 0, 32)]
    for qx, qy in ((32, 0), (0, 32)):
        tus += [(qx + dx, qy + dy, 16) for dy in (0, 16) for dx in (0, 16)]
    for sx, sy in ((32, 32), (48, 32), (32, 48)):
        tus += [(sx + dx, sy + dy, 8) for dy in (0, 8) for dx in (0, 8)]
    tus += [(48, 48, 8), (56, 48, 8)]
    tus += [(48 + dx, 56 + dy, 4) for dy in (0, 4) for dx in (0, 4, 8, 12)]
    return tus


TILING_PRESETS = ("mixed", "uniform4", "uniform8", "uniform16", "uniform32")


def validate_tiling(tus: Sequence[Tuple[int, int, int]], pu_size: int) -> None:
    covered = np.zeros((pu_size, pu_size), dtype=np.int32)
    for dx, dy, n in tus:
        if n not in BLOCK_SIZES:
            raise ConfigurationError(f"TU size {n} is not one of {BLOCK_SIZES}")
        if dx < 0 or dy < 0 or dx + n > pu_size or dy + n > pu_size:
            raise ConfigurationError(f"TU {n}x{n} at ({dx}, {dy}) leaves the {pu_size}x{pu_size} PU")
        covered[dy:dy + n, dx:dx + n] += 1
    if np.any(covered != 1):
        raise ConfigurationError(
            f"tiling does not cover the {pu_size}x{pu_size} PU exactly once "
            f"({int(np.sum(covered == 0))} uncovered, {int(np.sum(covered > 1))} overlapping pixels)"
        )


def parse_tiling(spec: str, pu_size: int) -> List[Tuple[int, int, int]]:
    """
    A preset name (mixed, uniformN) or an explicit list such as
    "8@0,0 8@8,0 8@0,8 8@8,8" (N@dx,dy).
    """
    spec = spec.strip()
    if spec == "mixed":
        if pu_size != 64:
            raise ConfigurationError("the mixed tiling is defined for 64x64 PUs only")
        tus = _mixed_tiling()
    elif spec.startswith("uniform"):
        try:
            n = int(spec[len("uniform"):])
        except ValueError:
            raise ConfigurationError(f"unknown tiling {spec!r}")
        if n not in BLOCK_SIZES or pu_size % n:
            raise ConfigurationError(f"uniform{n} does not tile a {pu_size}x{pu_size} PU")
        tus = [(dx, dy, n) for dy in range(0, pu_size, n) for dx in range(0, pu_size, n)]
    else:
        tus = []
        try:
            for item in spec.replace(";", " ").split():
                size, pos = item.split("@")
                dx, dy = pos.split(",")
                tus.append((int(dx), int(dy), int(size)))
        except ValueError:
            raise ConfigurationError(f"cannot parse tiling {spec!r}")
    validate_tiling(tus, pu_size)
    return tus


def build_groups(plane: Plane, pu_size: int, tiling: str, image_id: int = 0,
                 first_group_id: int = 0, stride: Optional[int] = None) -> List[PredictionGroup]:
    """PU grid over the plane (partial PUs at the right/bottom edge are cropped)"""
    tus = parse_tiling(tiling, pu_size)
    stride = stride or pu_size
    if stride < pu_size:
        raise ConfigurationError(f"stride {stride} is smaller than the PU size {pu_size}; PUs would overlap")
    groups = []
    for y in range(0, plane.height - pu_size + 1, stride):
        for x in range(0, plane.width - pu_size + 1, stride):
            groups.append(PredictionGroup(first_group_id + len(groups), image_id, x, y, pu_size, list(tus)))
    if not groups:
        logger.warning("Image %d (%dx%d) is smaller than one %dx%d PU; no groups",
                       image_id, plane.width, plane.height, pu_size, pu_size)
    return groups


def extract_group_samples(plane: Plane, group: PredictionGroup, ref_lines: int,
                          recon: Optional[Plane] = None, causal: bool = True) -> List[TrainSample]:
    return [extract_sample(plane, group.x + dx, group.y + dy, n, ref_lines, group.image_id,
                           group.group_id, recon, causal)
            for dx, dy, n in group.tus]


# ============================================================
# COMPLEXITY FILTER
# ============================================================

def complexity_keep_mask(mses: np.ndarray, image_ids: np.ndarray) -> np.ndarray:
    """
    Per image: keep a unit iff its MSE < 2 * (mean MSE of the image).
    When the image mean is 0 the test is non-strict so flat images survive.
    """
    mses = np.asarray(mses, dtype=np.float64)
    image_ids = np.asarray(image_ids)
    keep = np.zeros(mses.shape, dtype=bool)
    for image in np.unique(image_ids):
        members = image_ids == image
        mean_mse = float(mses[members].mean())
        threshold = 2.0 * mean_mse
        keep[members] = mses[members] <= threshold if mean_mse == 0.0 else mses[members] < threshold
    return keep


def complexity_filter(samples: Sequence[TrainSample], baseline_mse: Sequence[float]) -> List[TrainSample]:
    if len(samples) != len(baseline_mse):
        raise ShapeError(f"{len(samples)} samples but {len(baseline_mse)} MSE values")
    if not samples:
        logger.warning("Complexity filter got an empty image group; skipped")
        return []
    keep = complexity_keep_mask(baseline_mse, [s.origin[0] for s in samples])
    return [s for s, k in zip(samples, keep) if k]


# ============================================================
# DATASET FILES
# ============================================================

def write_dataset(samples, groups: Sequence[PredictionGroup], path: str) -> None:
    """
    Write one block size worth of samples plus the group table.

    `samples` is a SampleSet or a list of TrainSamples of a single (N, L).
    """
    sample_set = samples if isinstance(samples, SampleSet) else SampleSet.from_samples(list(samples))
    n, l = sample_set.block_size, sample_set.ref_lines
    parts = [_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, l, LAYOUT_VERSION,
                                  len(sample_set), len(groups))]
    parts.append(np.ascontiguousarray(sample_set.refs, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(sample_set.targets, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(sample_set.means, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(sample_set.group_ids, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(sample_set.origins, dtype="<i8").tobytes())
    for group in groups:
        parts.append(_GROUP_RECORD.pack(group.group_id, group.image_id, group.x, group.y,
                                        group.pu_size, len(group.tus)))
        parts.extend(_TU_RECORD.pack(dx, dy, size) for dx, dy, size in group.tus)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_dataset(path: str) -> Tuple[SampleSet, List[PredictionGroup]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated dataset header")
    magic, version, n, l, layout_version, count, group_count = _DATASET_HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version} (expected {DATASET_VERSION})")
    if layout_version != LAYOUT_VERSION:
        raise FormatError(f"{path}: reference layout v{layout_version}, this build uses v{LAYOUT_VERSION}")
    if n not in BLOCK_SIZES or l < 1:
        raise FormatError(f"{path}: implausible shape N={n} L={l}")

    offset = _DATASET_HEADER.size

    def take(dtype, shape):
        nonlocal offset
        size = int(np.prod(shape))
        nbytes = size * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated at byte {offset}")
        arr = np.frombuffer(blob, dtype=dtype, count=size, offset=offset).reshape(shape)
        offset += nbytes
        return arr.astype(np.float64 if dtype == "<f8" else np.int64)

    refs = take("<f8", (count, input_dim(n, l)))
    targets = take("<f8", (count, n * n))
    means = take("<f8", (count,))
    group_ids = take("<i8", (count,))
    origins = take("<i8", (count, 4))

    groups = []
    for _ in range(group_count):
        if offset + _GROUP_RECORD.size > len(blob):
            raise FormatError(f"{path}: truncated group table")
        group_id, image_id, x, y, pu_size, tu_count = _GROUP_RECORD.unpack_from(blob, offset)
        offset += _GROUP_RECORD.size
        if offset + tu_count * _TU_RECORD.size > len(blob):
            raise FormatError(f"{path}: truncated TU list")
        tus = [_TU_RECORD.unpack_from(blob, offset + i * _TU_RECORD.size) for i in range(tu_count)]
        offset += tu_count * _TU_RECORD.size
        groups.append(PredictionGroup(group_id, image_id, x, y, pu_size, [tuple(t) for t in tus]))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")

    return SampleSet(n, l, refs, targets, means, group_ids, origins), groups


# ============================================================
# TRAINING SETS (all block sizes, grouped)
# ============================================================

class TrainingSet:
    """
    Samples of every block size plus the prediction groups they belong to.

    `group_index[N][i]` is the position (0..G-1) of sample i's group in
    `groups`, which is sorted by group id.
    """

    def __init__(self, sets: Dict[int, SampleSet], groups: Sequence[PredictionGroup]):
        line_counts = {s.ref_lines for s in sets.values()}
        if len(line_counts) > 1:
            raise UsageError(f"sample sets use different reference line counts {sorted(line_counts)}")
        self.sets = {n: s for n, s in sorted(sets.items()) if len(s) > 0}
        self.ref_lines = line_counts.pop() if line_counts else 0

        used = set()
        for s in self.sets.values():
            used.update(int(g) for g in np.unique(s.group_ids))
        by_id = {}
        for group in groups:
            if group.group_id in used:
                by_id[group.group_id] = group
        missing = used - set(by_id)
        for gid in sorted(missing):
            # samples without a group table entry form single-TU groups
            by_id[gid] = PredictionGroup(gid, -1, -1, -1, 0, [])
        self.groups = [by_id[g] for g in sorted(by_id)]
        position = {g.group_id: i for i, g in enumerate(self.groups)}

        self.group_index: Dict[int, np.ndarray] = {}
        for group in self.groups:
            group.members = []
        for n, s in self.sets.items():
            index = np.array([position[int(g)] for g in s.group_ids], dtype=np.int64)
            self.group_index[n] = index
            for i, gpos in enumerate(index):
                self.groups[gpos].members.append((n, i))

    @property
    def block_sizes(self) -> List[int]:
        return sorted(self.sets)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def __len__(self) -> int:
        return sum(len(s) for s in self.sets.values())

    @classmethod
    def from_samples(cls, samples: Iterable[TrainSample], groups: Sequence[PredictionGroup] = ()) -> "TrainingSet":
        by_size: Dict[int, List[TrainSample]] = {}
        for sample in samples:
            by_size.setdefault(sample.block_size, []).append(sample)
        return cls({n: SampleSet.from_samples(items) for n, items in by_size.items()}, groups)

    def subset_groups(self, positions: np.ndarray) -> "TrainingSet":
        """Training set restricted to the groups at `positions`"""
        wanted = np.zeros(self.num_groups, dtype=bool)
        wanted[np.asarray(positions, dtype=np.int64)] = True
        sets = {n: s.subset(np.nonzero(wanted[self.group_index[n]])[0]) for n, s in self.sets.items()}
        return TrainingSet(sets, [g for g, w in zip(self.groups, wanted) if w])


def load_training_set(paths: Sequence[str]) -> TrainingSet:
    """Merge per-size .dcds files that share one group table"""
    if not paths:
        raise UsageError("no dataset files given")
    sets: Dict[int, SampleSet] = {}
    groups: Dict[int, PredictionGroup] = {}
    for path in paths:
        sample_set, file_groups = read_dataset(path)
        if sample_set.block_size in sets:
            sets[sample_set.block_size] = SampleSet.concat([sets[sample_set.block_size], sample_set])
        else:
            sets[sample_set.block_size] = sample_set
        for group in file_groups:
            known = groups.get(group.group_id)
            if known is not None and known.geometry() != group.geometry():
                raise FormatError(f"{path}: group {group.group_id} disagrees with an earlier file")
            groups[group.group_id] = group
    return TrainingSet(sets, list(groups.values()))
