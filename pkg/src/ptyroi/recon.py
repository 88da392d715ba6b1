"""Known-probe ePIE reconstruction and SSIM scoring.

The reconstructor is deliberately minimal: it exists to check that a
down-selected dataset still reconstructs the object region, not to compete
with production ptychography solvers.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import GeometryError, SizeError
from .simulator import scan_offsets

__all__ = [
    "ReconImage",
    "epie_reconstruct",
    "EPIEReconstructor",
    "phase_image",
    "gaussian_window",
    "ssim",
    "support_bbox",
    "align_global_phase",
    "phase_ssim",
]


@dataclass(frozen=True)
class ReconImage:
    object_estimate: np.ndarray
    pixel_pitch: float
    iterations: int
    error_trace: np.ndarray
    coverage: np.ndarray

    @property
    def shape(self):
        return self.object_estimate.shape


def _object_shape(ds, p, step_px):
    return ((ds.grid_rows - 1) * step_px + p, (ds.grid_cols - 1) * step_px + p)


def epie_reconstruct(
    ds,
    probe,
    iterations=100,
    object_step=1.0,
    *,
    step_px=None,
    seed=0,
    pixel_pitch=1.0,
    initial=None,
):
    """Reconstruct the object transmission from a dataset with a known probe.

    Each iteration visits every frame once, in an order drawn from a generator
    seeded with ``seed``.  For a frame with exit wave ``psi = P * O_patch`` the
    far-field modulus is replaced by the measured one and the patch updated
    with ``object_step * conj(P) / max|P|**2 * (psi' - psi)``.

    Parameters
    ----------
    ds : ScanDataset
    probe : Probe
        Must match the frame size.
    iterations : int
    object_step : float
    step_px : int, optional
        Scan step in object pixels; defaults to ``round(ds.step_size / pixel_pitch)``.
    seed : int
    initial : ndarray, optional
        Starting object; defaults to unit transmission.

    Returns
    -------
    ReconImage
        The object grid spans every window of the full scan grid, so
        reconstructions of filtered subsets share the geometry of the full one.
        ``error_trace[i]`` is the mean squared modulus misfit over the frames
        of iteration ``i``.
    """
    if ds.n_frames < 1:
        raise SizeError("cannot reconstruct from an empty dataset")
    p = probe.size
    if ds.frame_shape != (p, p):
        raise GeometryError(f"probe of size {p} does not match frames of shape {ds.frame_shape}")
    if iterations < 1:
        raise SizeError("iterations must be positive")
    if step_px is None:
        step_px = int(round(ds.step_size / pixel_pitch))
    shape = _object_shape(ds, p, step_px)
    if initial is None:
        obj = np.ones(shape, dtype=np.complex128)
    else:
        obj = np.array(initial, dtype=np.complex128)
        if obj.shape != shape:
            raise GeometryError(f"initial object {obj.shape} does not match scan extent {shape}")

    offsets = scan_offsets(ds.rows, ds.cols, step_px)
    # measured moduli moved to the unshifted FFT layout once, up front
    moduli = np.fft.ifftshift(np.sqrt(ds.patterns.astype(np.float64)), axes=(-2, -1))
    P = probe.amplitude
    weight = object_step * np.conj(P) / np.max(np.abs(P) ** 2)
    fft2, ifft2 = np.fft.fft2, np.fft.ifft2
    rng = np.random.default_rng(seed)
    trace = np.empty(iterations)
    coverage = np.zeros(shape, dtype=bool)
    footprint = P != 0
    for r0, c0 in offsets:
        coverage[r0:r0 + p, c0:c0 + p] |= footprint

    n = ds.n_frames
    for it in range(iterations):
        misfit = 0.0
        for k in rng.permutation(n):
            r0, c0 = offsets[k]
            view = obj[r0:r0 + p, c0:c0 + p]
            psi = P * view
            far = fft2(psi)
            mod = np.abs(far)
            measured = moduli[k]
            diff = mod - measured
            misfit += np.dot(diff.ravel(), diff.ravel())
            ratio = np.divide(measured, mod, out=np.ones_like(mod), where=mod > 0)
            view += weight * (ifft2(far * ratio) - psi)
        trace[it] = misfit / (n * p * p)
    return ReconImage(obj, float(pixel_pitch), int(iterations), trace, coverage)


def phase_image(recon):
    """Pixelwise phase of the object estimate in (-pi, pi]."""
    obj = recon.object_estimate if isinstance(recon, ReconImage) else np.asarray(recon)
    phase = np.angle(obj)
    phase[phase == -np.pi] = np.pi
    return phase


class EPIEReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`epie_reconstruct`.

    ``fit(ds)`` stores ``object_``, ``phase_`` and ``error_trace_``.
    """

    def __init__(self, probe=None, n_iter=100, object_step=1.0, step_px=None, random_state=0):
        self.probe = probe
        self.n_iter = n_iter
        self.object_step = object_step
        self.step_px = step_px
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.probe is None:
            raise ValueError("EPIEReconstructor needs the illumination probe")
        recon = epie_reconstruct(
            X, self.probe, self.n_iter, self.object_step, step_px=self.step_px, seed=self.random_state
        )
        self.recon_ = recon
        self.object_ = recon.object_estimate
        self.phase_ = phase_image(recon)
        self.error_trace_ = recon.error_trace
        return self

    def transform(self, X=None):
        check_is_fitted(self, "phase_")
        return self.phase_


# -- SSIM --------------------------------------------------------------------


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _smooth_valid(img, g):
    size = g.size
    tmp = sliding_window_view(img, size, axis=0) @ g
    return sliding_window_view(tmp, size, axis=1) @ g


def ssim(a, b, *, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity of two real images.

    Local statistics use a normalised ``window x window`` Gaussian (``sigma``)
    evaluated only where the window lies fully inside the image.  The dynamic
    range is the joint ``max - min`` of both images; two identical constant
    images score 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window:
        raise GeometryError(f"images must be 2-D and at least {window}x{window}, got {a.shape}")
    data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    if data_range == 0:
        return 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _smooth_valid(a, g)
    mu_b = _smooth_valid(b, g)
    var_a = _smooth_valid(a * a, g) - mu_a * mu_a
    var_b = _smooth_valid(b * b, g) - mu_b * mu_b
    cov = _smooth_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def support_bbox(mask):
    """Slices of the bounding box of the true pixels in ``mask``."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise SizeError("empty mask has no bounding box")
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def align_global_phase(obj, reference, mask=None):
    """Rotate ``obj`` by the constant phase that best matches ``reference``.

    Far-field data cannot fix the absolute phase of an object, so two
    reconstructions differ by an arbitrary constant.  The rotation angle is
    ``arg(sum(conj(reference) * obj))`` over ``mask``.
    """
    obj = np.asarray(obj)
    reference = np.asarray(reference)
    sel = np.ones(obj.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    z = np.vdot(reference[sel], obj[sel])
    if z == 0:
        return obj.copy()
    return obj * np.exp(-1j * np.angle(z))


def phase_ssim(recon, reference, crop=None):
    """SSIM between the phase of ``recon`` and of ``reference`` over ``crop``.

    ``recon`` is first phase-aligned to ``reference`` on the pixels it
    actually illuminated inside the crop.  ``crop`` is a pair of slices or a
    boolean mask whose bounding box is used; None compares whole grids.
    """
    if recon.shape != reference.shape:
        raise GeometryError(f"reconstruction grids differ: {recon.shape} vs {reference.shape}")
    if crop is None:
        crop = (slice(None), slice(None))
    elif isinstance(crop, np.ndarray):
        crop = support_bbox(crop)
    region = np.zeros(recon.shape, dtype=bool)
    region[crop] = True
    obj = align_global_phase(recon.object_estimate, reference.object_estimate, region & recon.coverage)
    return ssim(phase_image(obj)[crop], phase_image(reference)[crop])
