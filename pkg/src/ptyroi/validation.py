"""Input validation helpers shared by the estimators and the functional API."""

import numbers

import numpy as np

from .exceptions import DataError, GeometryError, SizeError


def check_pattern(pattern, *, dtype=np.float64):
    """Validate a single diffraction pattern and return it as a 2-D array."""
    arr = np.asarray(pattern, dtype=dtype)
    if arr.ndim != 2:
        raise GeometryError(f"a diffraction pattern must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise SizeError(f"empty diffraction pattern of shape {arr.shape}")
    _check_intensities(arr)
    return arr


def check_pattern_stack(X, *, dtype=None, chunk_size=1024):
    """Validate a ``(K, N, M)`` stack of diffraction patterns.

    The stack is not copied when ``dtype`` is None; validation runs chunk by
    chunk so memory-mapped stacks are never materialised in full.
    """
    arr = np.asarray(X) if dtype is None else np.asarray(X, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise GeometryError(f"expected a (K, N, M) pattern stack, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise SizeError("pattern stack holds no frames")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise SizeError(f"frames of shape {arr.shape[1:]} are empty")
    if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"unsupported pattern dtype {arr.dtype}")
    for start in range(0, arr.shape[0], chunk_size):
        _check_intensities(arr[start:start + chunk_size], offset=start)
    return arr


def _check_intensities(arr, offset=None):
    if not np.all(np.isfinite(arr)):
        where = "" if offset is None else f" (frames from {offset})"
        raise DataError(f"non-finite intensity{where}")
    if np.any(arr < 0):
        if offset is None or arr.ndim < 3:
            raise DataError("negative intensity")
        frame = offset + int(np.flatnonzero((arr < 0).any(axis=(1, 2)))[0])
        raise DataError(f"negative intensity in frame index {frame + 1}")


def check_1d(values, *, name="values", min_size=1, allow_nonfinite=False):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise GeometryError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise SizeError(f"{name} needs at least {min_size} entries, got {arr.size}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def check_grid_shape(grid_shape):
    try:
        rows, cols = (int(v) for v in grid_shape)
    except (TypeError, ValueError):
        raise GeometryError(f"grid shape must be a pair of integers, got {grid_shape!r}") from None
    if rows < 1 or cols < 1:
        raise GeometryError(f"grid shape must be positive, got {(rows, cols)}")
    return rows, cols


def check_rowcol(positions, grid_shape):
    """Return 1-based ``(rows, cols)`` int64 arrays from several position layouts.

    Accepts a :class:`~ptyroi.dataset.ScanDataset`, a sequence of objects with
    ``row``/``col`` attributes, or a ``(K, 2)`` integer array.  Raises
    :class:`GeometryError` for cells outside the grid or occupied twice.
    """
    rows_n, cols_n = check_grid_shape(grid_shape)
    if hasattr(positions, "rows") and hasattr(positions, "cols"):
        rows, cols = np.asarray(positions.rows), np.asarray(positions.cols)
    else:
        seq = list(positions) if not isinstance(positions, np.ndarray) else positions
        if len(seq) and hasattr(seq[0], "row"):
            rows = np.array([p.row for p in seq])
            cols = np.array([p.col for p in seq])
        else:
            arr = np.asarray(seq)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise GeometryError(f"positions must be (K, 2) row/col pairs, got shape {arr.shape}")
            rows, cols = arr[:, 0], arr[:, 1]
    if rows.size and not (np.issubdtype(rows.dtype, np.integer) and np.issubdtype(cols.dtype, np.integer)):
        if not (np.all(rows == np.round(rows)) and np.all(cols == np.round(cols))):
            raise GeometryError("grid rows and columns must be integers")
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    if np.any((rows < 1) | (rows > rows_n) | (cols < 1) | (cols > cols_n)):
        raise GeometryError(f"scan positions fall outside the {rows_n}x{cols_n} grid")
    flat = (rows - 1) * cols_n + (cols - 1)
    if np.unique(flat).size != flat.size:
        raise GeometryError("two scan positions share the same grid cell")
    return rows, cols


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise SizeError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
