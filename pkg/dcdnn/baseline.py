"""
HEVC directional intra prediction (planar, DC, 33 angular modes)

Single reference line, no reference smoothing and no boundary filters.
Used for the complexity filter and as the competing mode set in the
mode decision.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from dcdnn.errors import ShapeError, UsageError
from dcdnn.dataset import Plane, TrainSample, gather_references, reference_layout

logger = logging.getLogger(__name__)

NUM_MODES = 35
PLANAR = 0
DC = 1
HORIZONTAL = 10
VERTICAL = 26

# intraPredAngle for modes 2..34, in 1/32 sample units
INTRA_PRED_ANGLE = (
    32, 26, 21, 17, 13, 9, 5, 2, 0,
    -2, -5, -9, -13, -17, -21, -26, -32,
    -26, -21, -17, -13, -9, -5, -2, 0,
    2, 5, 9, 13, 17, 21, 26, 32,
)

INV_ANGLE = {-2: -4096, -5: -1638, -9: -910, -13: -630, -17: -482, -21: -390, -26: -315, -32: -256}


@dataclass(eq=False)
class RefLine:
    """
    One reference line, substitution filled.

    above[0] and left[0] are both the top-left corner; above[1..2N] runs
    right along the row above, left[1..2N] runs down the column left.
    """

    above: np.ndarray
    left: np.ndarray

    def __post_init__(self):
        self.above = np.asarray(self.above, dtype=np.int64)
        self.left = np.asarray(self.left, dtype=np.int64)
        if self.above.shape != self.left.shape or self.above.ndim != 1 or self.above.size % 2 != 1:
            raise ShapeError(f"RefLine needs two arrays of length 2N+1, got {self.above.shape} and {self.left.shape}")
        if self.above[0] != self.left[0]:
            raise ShapeError("above[0] and left[0] must both hold the corner sample")

    @property
    def block_size(self) -> int:
        return (self.above.size - 1) // 2


def _check(refs: RefLine, block_size: int) -> int:
    if refs.block_size != block_size:
        raise ShapeError(f"RefLine is for N={refs.block_size}, asked to predict N={block_size}")
    log2 = block_size.bit_length() - 1
    if block_size < 2 or (1 << log2) != block_size:
        raise UsageError(f"block size must be a power of two, got {block_size}")
    return log2


def ref_line_from_vector(values: np.ndarray, block_size: int, ref_lines: int) -> RefLine:
    """Nearest line of a layout-ordered reference vector (pixel units)"""
    n = block_size
    index = {pos: i for i, pos in enumerate(reference_layout(n, ref_lines))}
    values = np.rint(np.asarray(values, dtype=np.float64)).astype(np.int64)
    corner = values[index[(-1, -1)]]
    above = [corner] + [values[index[(dx, -1)]] for dx in range(2 * n)]
    left = [corner] + [values[index[(-1, dy)]] for dy in range(2 * n)]
    return RefLine(np.array(above), np.array(left))


def ref_line_from_sample(sample: TrainSample) -> RefLine:
    return ref_line_from_vector(sample.ref_vector + sample.ref_mean, sample.block_size, sample.ref_lines)


def ref_line_from_plane(plane: Plane, x: int, y: int, block_size: int, causal: bool = True) -> RefLine:
    return ref_line_from_vector(gather_references(plane, x, y, block_size, 1, causal), block_size, 1)


# ============================================================
# PREDICTORS
# ============================================================

def predict_dc(refs: RefLine, block_size: int) -> np.ndarray:
    log2 = _check(refs, block_size)
    n = block_size
    total = int(refs.above[1:n + 1].sum() + refs.left[1:n + 1].sum())
    return np.full((n, n), (total + n) >> (log2 + 1), dtype=np.int64)


def predict_planar(refs: RefLine, block_size: int) -> np.ndarray:
    log2 = _check(refs, block_size)
    n = block_size
    top = refs.above[1:n + 1]
    left = refs.left[1:n + 1]
    top_right = refs.above[n + 1]
    bottom_left = refs.left[n + 1]
    x = np.arange(n)[None, :]
    y = np.arange(n)[:, None]
    horizontal = (n - 1 - x) * left[:, None] + (x + 1) * top_right
    vertical = (n - 1 - y) * top[None, :] + (y + 1) * bottom_left
    return (horizontal + vertical + n) >> (log2 + 1)


def predict_angular(mode: int, refs: RefLine, block_size: int) -> np.ndarray:
    if not 2 <= mode < NUM_MODES:
        raise UsageError(f"angular mode must lie in [2, 34], got {mode}")
    _check(refs, block_size)
    n = block_size
    angle = INTRA_PRED_ANGLE[mode - 2]
    vertical = mode >= 18
    main, side = (refs.above, refs.left) if vertical else (refs.left, refs.above)

    # ref[k] lives at ref_array[k + n]; k runs from -n to 2n, plus one
    # zero-weight slot read when the projection lands exactly on ref[2n]
    ref_array = np.zeros(3 * n + 2, dtype=np.int64)
    ref_array[n:3 * n + 1] = main
    ref_array[3 * n + 1] = main[-1]
    if angle < 0 and (n * angle) >> 5 < -1:
        inv_angle = INV_ANGLE[angle]
        for k in range(-1, ((n * angle) >> 5) - 1, -1):
            ref_array[n + k] = side[(k * inv_angle + 128) >> 8]

    rows = np.arange(1, n + 1)[:, None]
    offsets = rows * angle
    idx = offsets >> 5
    fact = offsets & 31
    cols = np.arange(n)[None, :]
    first = ref_array[n + cols + idx + 1]
    second = ref_array[n + cols + idx + 2]
    pred = ((32 - fact) * first + fact * second + 16) >> 5
    return pred if vertical else pred.T


def predict(mode: int, refs: RefLine, block_size: int) -> np.ndarray:
    if mode == PLANAR:
        return predict_planar(refs, block_size)
    if mode == DC:
        return predict_dc(refs, block_size)
    return predict_angular(mode, refs, block_size)


def all_predictions(refs: RefLine, block_size: int) -> np.ndarray:
    """Stack of all 35 predictions, shape (35, N, N)"""
    return np.stack([predict(mode, refs, block_size) for mode in range(NUM_MODES)])


def best_baseline_mode(block: np.ndarray, refs: RefLine) -> Tuple[int, float]:
    """Exhaustive SSE search; ties go to the lowest mode index"""
    block = np.asarray(block, dtype=np.float64)
    n = refs.block_size
    if block.shape != (n, n):
        raise ShapeError(f"block shape {block.shape} does not match RefLine for N={n}")
    diff = all_predictions(refs, n) - block[None]
    sse = np.sum(diff * diff, axis=(1, 2))
    mode = int(np.argmin(sse))
    return mode, float(sse[mode])


def sample_baseline_sse(sample: TrainSample) -> Tuple[int, float]:
    return best_baseline_mode(sample.original_block(), ref_line_from_sample(sample))
