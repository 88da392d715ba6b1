"""Per-frame absorption and center-of-mass statistics and their scan-grid maps.

Center-of-mass convention: ``Ox`` is the intensity-weighted mean of the
1-based index along the first detector axis (rows, length N), ``Oy`` the mean
along the second axis (columns, length M).  A uniform frame therefore has its
center of mass at ``((N + 1) / 2, (M + 1) / 2)``.
"""

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateInputError, DomainError, SizeError, UndefinedCenterOfMassError
from .validation import check_1d, check_grid_shape, check_pattern, check_pattern_stack, check_rowcol

__all__ = [
    "ABSORPTION",
    "COM_MAGNITUDE",
    "CoMTable",
    "StatMap",
    "total_intensity",
    "center_of_mass",
    "frame_moments",
    "standardize",
    "com_magnitude",
    "build_stat_map",
    "mean_filter_3x3",
    "log_transform",
    "DiffractionStats",
]

ABSORPTION = "absorption"
COM_MAGNITUDE = "com_magnitude"
_KINDS = (ABSORPTION, COM_MAGNITUDE)


@dataclass(frozen=True)
class CoMTable:
    raw: np.ndarray
    standardized: np.ndarray
    mean_x: float
    mean_y: float
    sigma_x: float
    sigma_y: float

    @property
    def mean(self):
        return np.array([self.mean_x, self.mean_y])

    @property
    def sigma(self):
        return np.array([self.sigma_x, self.sigma_y])


@dataclass(frozen=True)
class StatMap:
    """Scalar field over the scan grid.

    Unoccupied cells hold NaN.  Occupied cells may hold ``-inf`` for dead
    frames (zero total intensity); those are skipped by the filter, the log
    transform and clustering.
    """

    values: np.ndarray
    occupied: np.ndarray
    kind: str = ABSORPTION

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown stat map kind {self.kind!r}")
        if self.values.shape != self.occupied.shape:
            raise ValueError("values and occupancy grids differ in shape")

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self):
        """Occupied cells carrying a finite statistic."""
        return self.occupied & np.isfinite(self.values)

    def at(self, rows, cols):
        return self.values[np.asarray(rows) - 1, np.asarray(cols) - 1]


# -- single-frame statistics -------------------------------------------------


def total_intensity(pattern):
    return float(np.sum(check_pattern(pattern)))


def center_of_mass(pattern):
    """Return the 1-based intensity-weighted centroid ``(Ox, Oy)`` of a frame."""
    p = check_pattern(pattern)
    total = p.sum()
    if total <= 0:
        raise UndefinedCenterOfMassError("center of mass of a zero-intensity pattern is undefined")
    n, m = p.shape
    ox = np.dot(np.arange(1, n + 1, dtype=np.float64), p.sum(axis=1)) / total
    oy = np.dot(np.arange(1, m + 1, dtype=np.float64), p.sum(axis=0)) / total
    return float(ox), float(oy)


def frame_moments(X, chunk_size=1024):
    """Total intensity and center of mass for every frame of a stack.

    Returns ``(totals, com)`` with ``com`` of shape ``(K, 2)``.  Rows of ``com``
    for zero-intensity (dead) frames are NaN.  Accumulation is done in float64
    a chunk at a time, so float32 and memory-mapped stacks work unchanged.
    """
    X = check_pattern_stack(X, chunk_size=chunk_size)
    k, n, m = X.shape
    totals = np.empty(k)
    com = np.empty((k, 2))
    row_idx = np.arange(1, n + 1, dtype=np.float64)
    col_idx = np.arange(1, m + 1, dtype=np.float64)
    for start in range(0, k, chunk_size):
        chunk = X[start:start + chunk_size]
        row_sums = chunk.sum(axis=2, dtype=np.float64)
        col_sums = chunk.sum(axis=1, dtype=np.float64)
        t = row_sums.sum(axis=1)
        totals[start:start + len(chunk)] = t
        with np.errstate(invalid="ignore", divide="ignore"):
            com[start:start + len(chunk), 0] = row_sums @ row_idx / t
            com[start:start + len(chunk), 1] = col_sums @ col_idx / t
    com[totals <= 0] = np.nan
    return totals, com


# -- standardization ---------------------------------------------------------


def standardize(raw, exclude=None):
    """Z-score each column of a ``(K, 2)`` center-of-mass table.

    Uses the sample standard deviation.  Rows flagged in ``exclude`` (dead
    frames) do not enter the mean or spread and come out as NaN.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise SizeError(f"expected a (K, 2) table, got shape {raw.shape}")
    use = np.ones(len(raw), dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    live = raw[use]
    if len(live) < 2:
        raise SizeError(f"standardization needs at least 2 live rows, got {len(live)}")
    if not np.all(np.isfinite(live)):
        raise DegenerateInputError("non-finite center of mass among live frames")
    mean = live.mean(axis=0)
    # second pass removes the rounding left in the first mean
    mean = mean + (live - mean).mean(axis=0)
    sigma = np.sqrt(np.sum((live - mean) ** 2, axis=0) / (len(live) - 1))
    for axis, s in zip("xy", sigma):
        if not s > 0:
            raise DegenerateInputError(f"zero spread of the center of mass along {axis}")
    standardized = np.full_like(raw, np.nan)
    standardized[use] = (live - mean) / sigma
    return CoMTable(raw, standardized, float(mean[0]), float(mean[1]), float(sigma[0]), float(sigma[1]))


def com_magnitude(table):
    """Length of each standardized center-of-mass vector; NaN rows map to 0."""
    z = table.standardized if isinstance(table, CoMTable) else np.asarray(table, dtype=np.float64)
    mag = np.hypot(z[:, 0], z[:, 1])
    mag[np.isnan(mag)] = 0.0
    return mag


# -- scan-grid maps ----------------------------------------------------------


def build_stat_map(values, positions, grid_shape, kind=ABSORPTION):
    """Scatter per-frame values onto the scan grid (row-major, 1-based cells)."""
    values = check_1d(values, allow_nonfinite=True)
    shape = check_grid_shape(grid_shape)
    rows, cols = check_rowcol(positions, shape)
    if rows.size != values.size:
        raise SizeError(f"{values.size} values for {rows.size} positions")
    grid = np.full(shape, np.nan)
    occupied = np.zeros(shape, dtype=bool)
    grid[rows - 1, cols - 1] = values
    occupied[rows - 1, cols - 1] = True
    return StatMap(grid, occupied, kind)


def _neighbourhoods(arr, fill):
    padded = np.pad(arr, 1, constant_values=fill)
    h, w = arr.shape
    return np.stack([padded[dr:dr + h, dc:dc + w] for dr in range(3) for dc in range(3)])


def mean_filter_3x3(stat_map):
    """Average every valid cell over the valid cells of its 3x3 neighbourhood.

    Unoccupied, dead and out-of-bounds neighbours count in neither numerator nor
    denominator.  The mean is accumulated relative to the neighbourhood minimum
    so a constant neighbourhood returns its value exactly.
    """
    valid = stat_map.valid
    vals = np.where(valid, stat_map.values, 0.0)
    nb_vals = _neighbourhoods(vals, 0.0)
    nb_valid = _neighbourhoods(valid, False)
    count = nb_valid.sum(axis=0)
    lowest = np.where(nb_valid, nb_vals, np.inf).min(axis=0)
    lowest = np.where(valid, lowest, 0.0)
    dev = np.where(nb_valid, nb_vals - lowest, 0.0).sum(axis=0)
    out = stat_map.values.copy()
    out[valid] = lowest[valid] + dev[valid] / count[valid]
    return replace(stat_map, values=out)


def log_transform(stat_map, epsilon=None):
    """Natural log of ``value + epsilon`` on valid cells.

    ``epsilon`` defaults to ``1e-12`` times the largest valid value, floored at
    the smallest normal double.  Dead cells (``-inf``) stay ``-inf``.
    """
    valid = stat_map.valid
    if epsilon is None:
        top = stat_map.values[valid].max() if valid.any() else 0.0
        epsilon = max(1e-12 * top, np.finfo(np.float64).tiny)
    if not epsilon > 0:
        raise DomainError(f"log offset must be positive, got {epsilon}")
    shifted = stat_map.values[valid] + epsilon
    if np.any(shifted <= 0):
        raise DomainError("log of a non-positive value")
    out = stat_map.values.copy()
    out[valid] = np.log(shifted)
    return replace(stat_map, values=out)


# -- estimator ---------------------------------------------------------------


class DiffractionStats(TransformerMixin, BaseEstimator):
    """Map a diffraction stack to per-frame ``[total_intensity, com_magnitude]``.

    ``fit`` learns the center-of-mass standardization (mean and sample standard
    deviation over live frames); ``transform`` applies it.  Dead frames get a
    total of 0 and a magnitude of 0 and are listed in ``dead_``.

    Parameters
    ----------
    chunk_size : int
        Frames accumulated per vectorised pass.

    Attributes
    ----------
    com_table_ : CoMTable
    mean_, scale_ : ndarray of shape (2,)
    dead_ : ndarray of bool, shape (K,)
    """

    def __init__(self, chunk_size=1024):
        self.chunk_size = chunk_size

    def fit(self, X, y=None):
        self._fit_transform(X)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self._fit_transform(X)

    def _fit_transform(self, X):
        totals, com = frame_moments(X, chunk_size=self.chunk_size)
        dead = totals <= 0
        table = standardize(com, exclude=dead)
        self.com_table_ = table
        self.mean_ = table.mean
        self.scale_ = table.sigma
        self.dead_ = dead
        self.n_features_in_ = 2
        return np.column_stack([totals, com_magnitude(table)])

    def transform(self, X):
        check_is_fitted(self, "mean_")
        totals, com = frame_moments(X, chunk_size=self.chunk_size)
        mag = np.hypot(*((com - self.mean_) / self.scale_).T)
        mag[np.isnan(mag)] = 0.0
        return np.column_stack([totals, mag])

    def get_feature_names_out(self, input_features=None):
        return np.array([ABSORPTION, COM_MAGNITUDE], dtype=object)
