"""Dense float32 tensors and the shape/indexing conventions shared by every layer.

Tensors are plain C-contiguous ``numpy.ndarray`` values in row-major layout
(last axis fastest).  The axis convention throughout the package is
(channels, temporal length, height, width), with an optional leading batch
axis.  All values are expected to stay finite; NaN/Inf is an error state.
"""

import math

import numpy as np

DTYPE = np.float32

# Largest element count accepted for a single tensor; keeps offsets inside a
# platform integer with headroom for byte offsets.
MAX_ELEMENTS = 2**48


def check_shape(shape):
    """Validate a shape and return it as a tuple of ints.

    Every dim must be >= 1 and the element count must fit in a platform
    integer.
    """
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ValueError("shape must have at least one dimension")
    for d in dims:
        if d < 1:
            raise ValueError(f"shape dims must be >= 1, got {dims}")
    if math.prod(dims) > MAX_ELEMENTS:
        raise OverflowError(f"element count of shape {dims} overflows")
    return dims


def element_count(shape):
    return math.prod(check_shape(shape))


def tensor_new(shape, fill="zeros", *, value=0.0, low=-1.0, high=1.0, seed=0):
    """Allocate a float32 tensor with one of the supported fill rules.

    fill is one of "zeros", "constant" (uses ``value``) or "uniform" (uses
    ``low``/``high``/``seed``).  Seeded fills are bit-reproducible for a
    given seed.
    """
    dims = check_shape(shape)
    if fill == "zeros":
        return np.zeros(dims, dtype=DTYPE)
    if fill == "constant":
        return np.full(dims, value, dtype=DTYPE)
    if fill == "uniform":
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.uniform(low, high, size=dims).astype(DTYPE)
    raise ValueError(f"unknown fill rule {fill!r}")


def linear_index(shape, coords):
    """Row-major offset of ``coords`` in a tensor of the given shape.

    Inverse of decomposing a flat offset into per-axis coordinates; bijective
    between valid coordinates and [0, element_count).
    """
    dims = check_shape(shape)
    coords = tuple(int(c) for c in coords)
    if len(coords) != len(dims):
        raise ValueError(f"coords {coords} do not match rank of shape {dims}")
    offset = 0
    for c, d in zip(coords, dims):
        if not 0 <= c < d:
            raise IndexError(f"coordinate {coords} out of bounds for shape {dims}")
        offset = offset * d + c
    return offset


def coords_of(shape, index):
    """Per-axis coordinates of a row-major offset (inverse of linear_index)."""
    dims = check_shape(shape)
    n = element_count(dims)
    index = int(index)
    if not 0 <= index < n:
        raise IndexError(f"offset {index} out of bounds for shape {dims}")
    coords = []
    for d in reversed(dims):
        coords.append(index % d)
        index //= d
    return tuple(reversed(coords))


def assert_finite(arr, context=""):
    """Raise if ``arr`` contains NaN or Inf (error state for this package)."""
    if not np.all(np.isfinite(arr)):
        where = context or "tensor"
        raise FloatingPointError(f"non-finite values in {where}")


def as_tensor(arr, name="input"):
    """Coerce to a C-contiguous float32 array without copying when possible."""
    out = np.ascontiguousarray(arr, dtype=DTYPE)
    if out.ndim == 0:
        raise ValueError(f"{name} must have at least one dimension")
    return out
