"""Two-cluster k-means on stat maps and region-of-interest masks."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateInputError, EmptySelectionError, GeometryError, SizeError
from .stats import ABSORPTION, COM_MAGNITUDE, build_stat_map, log_transform, mean_filter_3x3
from .validation import check_1d, check_positive_int, check_rowcol

__all__ = [
    "KMeansResult",
    "RoiMask",
    "kmeans2",
    "KMeans2",
    "select_absorption_roi",
    "select_scatter_roi",
    "union_roi",
    "intersect_roi",
    "adjust_border",
    "roi_fraction",
    "prepare_map",
    "RoiSelector",
]


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    iterations_run: int
    converged: bool
    inertia: float


def _assign(values, centroids):
    # ties go to the lower centroid
    return (np.abs(values - centroids[1]) < np.abs(values - centroids[0])).astype(np.int64)


def _optimal_cut_centroids(values):
    # best threshold cut of the sorted data: maximise n_lo * n_hi * (mean_hi - mean_lo)**2,
    # i.e. the between-cluster sum of squares, which avoids subtracting large squares
    s = np.sort(values)
    k = s.size
    csum = np.cumsum(s - s.mean())
    n_lo = np.arange(1, k)
    mean_lo = csum[:-1] / n_lo
    mean_hi = (csum[-1] - csum[:-1]) / (k - n_lo)
    score = n_lo * (k - n_lo) * (mean_hi - mean_lo) ** 2
    score[s[:-1] == s[1:]] = -np.inf
    t = int(np.argmax(score)) + 1
    return np.array([s[:t].mean(), s[t:].mean()])


def kmeans2(values, max_iters=10, init="optimal"):
    """Lloyd's algorithm for two clusters on 1-D data.

    Each iteration assigns every value to its nearest centroid (ties go to the
    lower one) and moves the centroids to the cluster means.  The loop stops as
    soon as an assignment repeats or after ``max_iters`` iterations.

    ``init="optimal"`` seeds the centroids with the means of the best threshold
    cut of the sorted values, found in one pass.  In one dimension the optimal
    two-cluster partition is such a cut and is a fixed point of Lloyd's
    iteration, so the result is the global minimum of the within-cluster sum
    of squares.  ``init="minmax"`` starts from ``min(values)`` and
    ``max(values)`` instead and may stop in a local minimum.

    Labels always refer to the returned centroids, which are ascending.
    """
    values = check_1d(values, min_size=2)
    max_iters = check_positive_int(max_iters, "max_iters")
    lo, hi = values.min(), values.max()
    if lo == hi:
        raise DegenerateInputError("all values are identical; nothing to cluster")
    if init == "optimal":
        centroids = _optimal_cut_centroids(values)
    elif init == "minmax":
        centroids = np.array([lo, hi])
    else:
        raise ValueError(f"unknown init {init!r}; use 'optimal' or 'minmax'")
    labels = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new = _assign(values, centroids)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            iterations -= 1
            break
        labels = new
        centroids = np.array([values[labels == 0].mean(), values[labels == 1].mean()])
    if not converged:
        # the cap was hit right after a centroid move; re-assign so labels match
        final = _assign(values, centroids)
        converged = np.array_equal(final, labels)
        labels = final
    order = np.argsort(centroids, kind="stable")
    if order[0] != 0:
        centroids = centroids[order]
        labels = 1 - labels
    inertia = float(np.sum((values - centroids[labels]) ** 2))
    return KMeansResult(labels, centroids, iterations, converged, inertia)


class KMeans2(ClusterMixin, BaseEstimator):
    """Deterministic two-cluster k-means for one feature.

    Parameters
    ----------
    max_iter : int, default=10
        Iteration cap for Lloyd's algorithm.
    init : {"optimal", "minmax"}, default="optimal"
        Centroid seeding, see :func:`kmeans2`.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        0 for the low cluster, 1 for the high cluster.
    cluster_centers_ : ndarray of shape (2, 1)
    n_iter_ : int
    inertia_ : float
    """

    def __init__(self, max_iter=10, init="optimal"):
        self.max_iter = max_iter
        self.init = init

    def fit(self, X, y=None):
        result = kmeans2(X, self.max_iter, self.init)
        self.labels_ = result.labels
        self.cluster_centers_ = result.centroids[:, np.newaxis]
        self.n_iter_ = result.iterations_run
        self.converged_ = result.converged
        self.inertia_ = result.inertia
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return _assign(check_1d(X), self.cluster_centers_[:, 0])


# -- masks -------------------------------------------------------------------


@dataclass(frozen=True)
class RoiMask:
    cells: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        if self.cells.shape != self.occupied.shape:
            raise GeometryError("mask and occupancy grids differ in shape")
        if np.any(self.cells & ~self.occupied):
            raise GeometryError("mask selects unoccupied cells")

    @property
    def shape(self):
        return self.cells.shape

    @property
    def count(self):
        return int(self.cells.sum())

    def __eq__(self, other):
        if not isinstance(other, RoiMask):
            return NotImplemented
        return np.array_equal(self.cells, other.cells) and np.array_equal(self.occupied, other.occupied)

    def __hash__(self):
        return hash((self.cells.tobytes(), self.occupied.tobytes()))


def _check_compatible(a, b):
    if a.shape != b.shape:
        raise GeometryError(f"mask grids differ: {a.shape} vs {b.shape}")


def union_roi(a, b):
    _check_compatible(a, b)
    return RoiMask(a.cells | b.cells, a.occupied | b.occupied)


def intersect_roi(a, b):
    _check_compatible(a, b)
    return RoiMask(a.cells & b.cells, a.occupied | b.occupied)


def roi_fraction(mask):
    occupied = int(mask.occupied.sum())
    if occupied == 0:
        raise SizeError("mask has no occupied cells")
    return mask.count / occupied


def _shift_or(cells, radius_r, radius_c, erode):
    # separable square structuring element, zero outside the grid
    out = cells.copy()
    h, w = cells.shape
    for axis, radius, size in ((0, radius_r, h), (1, radius_c, w)):
        src = out
        acc = src.copy()
        for d in range(1, min(radius, size) + 1):
            for sign in (1, -1):
                shifted = np.zeros_like(src)
                if axis == 0:
                    if sign > 0:
                        shifted[d:] = src[:-d]
                    else:
                        shifted[:-d] = src[d:]
                else:
                    if sign > 0:
                        shifted[:, d:] = src[:, :-d]
                    else:
                        shifted[:, :-d] = src[:, d:]
                acc = acc & shifted if erode else acc | shifted
        out = acc
    return out


def adjust_border(mask, border, border_cols=None):
    """Grow (``border > 0``) or shrink (``border < 0``) the selected region.

    Uses a square structuring element of half-width ``|border|`` scan steps.
    Dilation never selects unoccupied cells.  Erosion treats cells beyond the
    grid edge as unselected.  ``border_cols`` sets a separate half-width along
    grid columns (same sign as ``border``) for anisotropic adjustment.
    """
    border = int(border)
    bc = border if border_cols is None else int(border_cols)
    limit = max(mask.shape)
    if abs(border) > limit or abs(bc) > limit:
        raise ValueError(f"|border| must not exceed {limit}")
    if border == 0 and bc == 0:
        return mask
    if border * bc < 0:
        raise ValueError("border and border_cols must have the same sign")
    erode = border < 0 or bc < 0
    cells = _shift_or(mask.cells, abs(border), abs(bc), erode)
    cells &= mask.occupied
    if erode and not cells.any():
        raise EmptySelectionError(f"erosion by {border} removes every selected cell")
    return RoiMask(cells, mask.occupied)


# -- selection ---------------------------------------------------------------


def _cluster_map(stat_map, max_iters, exclude, init):
    valid = stat_map.valid
    if exclude is not None:
        valid = valid & ~exclude
    result = kmeans2(stat_map.values[valid], max_iters, init)
    return valid, result


def select_absorption_roi(stat_map, max_iters=10, exclude=None, init="optimal"):
    """Select cells in the low-centroid cluster of an absorption map.

    Low total intensity means the probe passed through absorbing material.
    """
    valid, result = _cluster_map(stat_map, max_iters, exclude, init)
    cells = np.zeros(stat_map.shape, dtype=bool)
    cells[valid] = result.labels == 0
    return RoiMask(cells, stat_map.occupied.copy())


def select_scatter_roi(stat_map, max_iters=10, exclude=None, init="optimal"):
    """Select cells in the high-centroid cluster of a CoM-magnitude map."""
    valid, result = _cluster_map(stat_map, max_iters, exclude, init)
    cells = np.zeros(stat_map.shape, dtype=bool)
    cells[valid] = result.labels == 1
    return RoiMask(cells, stat_map.occupied.copy())


def prepare_map(stat_map, smooth=True, log_scale=True, epsilon=None, log_first=True):
    """Smooth and log-scale a stat map ahead of clustering.

    With ``log_first`` the log is taken before the 3x3 mean filter.  Averaging
    raw values first spreads the few large center-of-mass spikes at object
    edges into their empty-field neighbours, which the log then lifts above the
    cluster threshold.
    """
    if log_scale and log_first:
        stat_map = log_transform(stat_map, epsilon)
    if smooth:
        stat_map = mean_filter_3x3(stat_map)
    if log_scale and not log_first:
        stat_map = log_transform(stat_map, epsilon)
    return stat_map


class RoiSelector(BaseEstimator):
    """Pick the region of interest from per-frame absorption and CoM statistics.

    ``X`` is the ``(K, 2)`` output of :class:`~ptyroi.stats.DiffractionStats`:
    total intensity and standardized center-of-mass magnitude per frame.  Each
    column is placed on the scan grid, optionally smoothed and log scaled, and
    split in two by :func:`kmeans2`.  The low-absorption-value cluster and the
    high-magnitude cluster are merged, then the border adjusted.

    Frames with zero total intensity are never selected and are left out of
    both maps' filtering and clustering.

    Parameters
    ----------
    smooth : bool, default=True
        Apply the 3x3 mean filter.
    log_scale : bool, default=True
        Cluster log-scaled maps; with False the (filtered) raw values are used.
    log_first : bool, default=True
        Take the log before filtering rather than after.
    max_iter : int, default=10
    kmeans_init : {"optimal", "minmax"}, default="optimal"
    border : int, default=0
    border_cols : int or None, default=None
    epsilon : float or None, default=None
        Log offset; None uses 1e-12 of each map's maximum.

    Attributes
    ----------
    absorption_map_, magnitude_map_ : StatMap
        Maps after preprocessing, as clustered.
    absorption_mask_, scatter_mask_, union_mask_, mask_ : RoiMask
        ``mask_`` is ``union_mask_`` after the border adjustment.
    selected_ : ndarray of bool, shape (K,)
    """

    def __init__(
        self,
        smooth=True,
        log_scale=True,
        log_first=True,
        max_iter=10,
        kmeans_init="optimal",
        border=0,
        border_cols=None,
        epsilon=None,
    ):
        self.smooth = smooth
        self.log_scale = log_scale
        self.log_first = log_first
        self.max_iter = max_iter
        self.kmeans_init = kmeans_init
        self.border = border
        self.border_cols = border_cols
        self.epsilon = epsilon

    def fit(self, X, y=None, positions=None, grid_shape=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise GeometryError(f"expected (K, 2) per-frame statistics, got shape {X.shape}")
        if positions is None:
            raise ValueError("RoiSelector.fit needs the scan positions")
        if grid_shape is None:
            grid_shape = getattr(positions, "grid_shape", None)
            if grid_shape is None:
                raise ValueError("RoiSelector.fit needs the grid shape")
        totals, magnitude = X[:, 0], X[:, 1]
        dead = totals <= 0
        absorption = np.where(dead, -np.inf, totals)
        raw_abs = build_stat_map(absorption, positions, grid_shape, ABSORPTION)
        raw_mag = build_stat_map(np.where(dead, -np.inf, magnitude), positions, grid_shape, COM_MAGNITUDE)
        dead_grid = raw_abs.occupied & np.isneginf(raw_abs.values)
        self.raw_absorption_map_ = raw_abs
        self.raw_magnitude_map_ = raw_mag
        prep = dict(smooth=self.smooth, log_scale=self.log_scale, epsilon=self.epsilon, log_first=self.log_first)
        self.absorption_map_ = prepare_map(raw_abs, **prep)
        self.magnitude_map_ = prepare_map(raw_mag, **prep)
        self.absorption_mask_ = select_absorption_roi(
            self.absorption_map_, self.max_iter, exclude=dead_grid, init=self.kmeans_init
        )
        self.scatter_mask_ = select_scatter_roi(
            self.magnitude_map_, self.max_iter, exclude=dead_grid, init=self.kmeans_init
        )
        self.union_mask_ = union_roi(self.absorption_mask_, self.scatter_mask_)
        mask = adjust_border(self.union_mask_, self.border, self.border_cols)
        cells = mask.cells & ~dead_grid
        if not cells.any():
            raise EmptySelectionError("no live frame selected")
        self.mask_ = RoiMask(cells, mask.occupied)
        self.dead_cells_ = dead_grid
        rows, cols = check_rowcol(positions, grid_shape)
        self.selected_ = self.mask_.cells[rows - 1, cols - 1]
        self.n_features_in_ = 2
        return self

    def fit_predict(self, X, y=None, positions=None, grid_shape=None):
        return self.fit(X, positions=positions, grid_shape=grid_shape).selected_

    def summary(self):
        """Cluster sizes, overlap and retained fraction of the fitted selection."""
        check_is_fitted(self, "mask_")
        a, b = self.absorption_mask_, self.scatter_mask_
        overlap = intersect_roi(a, b).count
        return {
            "occupied": int(self.mask_.occupied.sum()),
            "dead": int(self.dead_cells_.sum()),
            "absorption_cluster": a.count,
            "scatter_cluster": b.count,
            "overlap": overlap,
            "union": self.union_mask_.count,
            "border": int(self.border),
            "selected": self.mask_.count,
            "fraction": roi_fraction(self.mask_),
        }
