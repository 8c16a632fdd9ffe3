"""Shape-checked dense array operations shared by the whole pipeline.

All numeric state (patches, feature maps, weights, gradients) is carried
in row-major numpy arrays of FLOAT dtype. Arithmetic here never
broadcasts: operand shapes must match exactly, so hand-written backprop
cannot silently mix mismatched tensors.
"""

from __future__ import annotations

import numpy as np

# float64 for training (finite-difference checks need the headroom);
# inference may cast down to this dtype instead.
FLOAT = np.float64
INFERENCE_FLOAT = np.float32


def as_tensor(data, dtype=FLOAT) -> np.ndarray:
    """Materialize `data` as a contiguous row-major array of `dtype`."""
    return np.ascontiguousarray(data, dtype=dtype)


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{op}: operand shapes differ: {a.shape} vs {b.shape}"
        )


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "sub")
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "mul")
    return a * b


def scale(a: np.ndarray, k: float) -> np.ndarray:
    return a * FLOAT(k)


def max0(a: np.ndarray) -> np.ndarray:
    """Rectifier: elementwise max(0, a)."""
    return np.maximum(a, 0.0)


def _require_nonempty(a: np.ndarray, op: str) -> None:
    if a.size == 0:
        raise ValueError(f"{op}: empty tensor has no reduction value")


def reduce_sum(a: np.ndarray) -> float:
    _require_nonempty(a, "sum")
    return float(np.sum(np.ascontiguousarray(a)))


def reduce_max(a: np.ndarray) -> float:
    _require_nonempty(a, "max")
    return float(np.max(a))


def reduce_min(a: np.ndarray) -> float:
    _require_nonempty(a, "min")
    return float(np.min(a))


def reduce_mean(a: np.ndarray) -> float:
    _require_nonempty(a, "mean")
    return float(np.mean(np.ascontiguousarray(a)))


def reshape(a: np.ndarray, new_shape) -> np.ndarray:
    new_shape = tuple(int(s) for s in new_shape)
    want = int(np.prod(new_shape)) if new_shape else 1
    if want != a.size:
        raise ValueError(
            f"reshape: cannot view {a.size} elements (shape {a.shape}) "
            f"as shape {new_shape} ({want} elements)"
        )
    # row-major data order is preserved
    return np.reshape(a, new_shape)


def rotate90k(a: np.ndarray, k: int) -> np.ndarray:
    """Rotate a 2-D tensor counterclockwise by k quarter turns."""
    if a.ndim != 2:
        raise ValueError(f"rotate90k: expected a 2-D tensor, got shape {a.shape}")
    return np.ascontiguousarray(np.rot90(a, k % 4))
