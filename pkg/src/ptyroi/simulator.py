"""Synthetic ptychography scans of a Shepp-Logan phantom.

The object is a complex transmission function built from the ten-ellipse
Shepp-Logan intensity map ``I`` (scaled to [0, 1])::

    t = exp(i * phase_strength * I) * (1 - absorption * I)

A uniform circular probe is raster scanned across it and each exit wave is
propagated to the far field with an unnormalised, centred 2-D FFT.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import ScanDataset
from .exceptions import GeometryError, SizeError

__all__ = [
    "SHEPP_LOGAN_ELLIPSES",
    "Phantom",
    "Probe",
    "shepp_logan",
    "shepp_logan_intensity",
    "circular_probe",
    "far_field",
    "inverse_far_field",
    "forward_diffraction",
    "simulate_scan",
    "scan_offsets",
    "support_overlap",
]

# value, semi-axis x, semi-axis y, centre x, centre y, rotation (deg)
SHEPP_LOGAN_ELLIPSES = (
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


@dataclass(frozen=True)
class Phantom:
    transmission: np.ndarray
    support: np.ndarray
    intensity: np.ndarray
    absorption: float = 0.3
    phase_strength: float = 0.5

    @property
    def shape(self):
        return self.transmission.shape

    @property
    def phase(self):
        """Programmed phase map, ``phase_strength * intensity``."""
        return self.phase_strength * self.intensity


@dataclass(frozen=True)
class Probe:
    amplitude: np.ndarray
    diameter_px: int

    @property
    def size(self):
        return self.amplitude.shape[0]

    @property
    def power(self):
        return float(np.sum(np.abs(self.amplitude) ** 2))

    @property
    def footprint(self):
        return self.amplitude != 0


def _pixel_coordinates(n):
    # pixel centres on [-1, 1]; row 0 is the top (y = +1) edge
    c = (2.0 * np.arange(n) + 1.0) / n - 1.0
    return np.meshgrid(c, -c, indexing="xy")


def _inside(x, y, ellipse):
    _, a, b, x0, y0, theta = ellipse
    t = np.deg2rad(theta)
    dx, dy = x - x0, y - y0
    xr = dx * np.cos(t) + dy * np.sin(t)
    yr = -dx * np.sin(t) + dy * np.cos(t)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def shepp_logan_intensity(n):
    """Return ``(intensity, support)`` for the ``n x n`` Shepp-Logan phantom.

    Intensities are scaled so the maximum is 1; ``support`` marks pixels inside
    at least one ellipse.
    """
    if n < 16:
        raise SizeError(f"phantom needs n >= 16 pixels, got {n}")
    x, y = _pixel_coordinates(n)
    image = np.zeros((n, n))
    support = np.zeros((n, n), dtype=bool)
    for ellipse in SHEPP_LOGAN_ELLIPSES:
        inside = _inside(x, y, ellipse)
        image[inside] += ellipse[0]
        support |= inside
    image[~support] = 0.0
    image /= image.max()
    return image, support


def shepp_logan(n, absorption=0.3, phase_strength=0.5):
    """Complex Shepp-Logan transmission object on an ``n x n`` grid.

    Parameters
    ----------
    n : int
        Grid size in pixels, at least 16.
    absorption : float
        Fraction of amplitude removed where the scaled intensity is 1; in [0, 1].
    phase_strength : float
        Phase delay in radians where the scaled intensity is 1.

    Returns
    -------
    Phantom
    """
    if not 0.0 <= absorption <= 1.0:
        raise ValueError(f"absorption must lie in [0, 1], got {absorption}")
    if absorption == 0.0 and phase_strength == 0.0:
        raise ValueError("absorption and phase_strength cannot both be zero")
    intensity, support = shepp_logan_intensity(n)
    transmission = np.exp(1j * phase_strength * intensity) * (1.0 - absorption * intensity)
    transmission[~support] = 1.0 + 0.0j
    return Phantom(transmission, support, intensity, float(absorption), float(phase_strength))


def circular_probe(p, diameter_px):
    """Uniform unit-amplitude disk of ``diameter_px`` centred in a ``p x p`` grid.

    A pixel belongs to the disk when its centre lies within ``diameter_px / 2``
    of the grid centre.
    """
    if diameter_px < 1 or p < 1:
        raise SizeError(f"probe size and diameter must be positive, got p={p}, d={diameter_px}")
    if diameter_px > p:
        raise SizeError(f"probe diameter {diameter_px} exceeds window size {p}")
    centre = (p - 1) / 2.0
    r, c = np.mgrid[0:p, 0:p]
    inside = (r - centre) ** 2 + (c - centre) ** 2 <= (diameter_px / 2.0) ** 2
    return Probe(inside.astype(np.complex128), int(diameter_px))


def far_field(wave):
    """Unnormalised forward FFT with the zero frequency moved to the centre."""
    return np.fft.fftshift(np.fft.fft2(wave), axes=(-2, -1))


def inverse_far_field(field):
    return np.fft.ifft2(np.fft.ifftshift(field, axes=(-2, -1)))


def _window(obj, probe, top_left):
    transmission = obj.transmission if isinstance(obj, Phantom) else np.asarray(obj)
    p = probe.size
    r0, c0 = (int(v) for v in top_left)
    h, w = transmission.shape
    if r0 < 0 or c0 < 0 or r0 + p > h or c0 + p > w:
        raise GeometryError(f"probe window at {(r0, c0)} of size {p} leaves the {h}x{w} object")
    return transmission[r0:r0 + p, c0:c0 + p]


def forward_diffraction(obj, probe, top_left):
    """Far-field intensity ``|FFT2(probe * patch)|**2`` for one probe position.

    ``top_left`` is the 0-based pixel offset of the probe window in the object.
    """
    patch = _window(obj, probe, top_left)
    return np.abs(far_field(probe.amplitude * patch)) ** 2


def scan_offsets(rows, cols, step_px):
    """0-based pixel offsets of the probe windows for 1-based grid cells."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    return np.column_stack([(rows - 1) * step_px, (cols - 1) * step_px])


def support_overlap(phantom, probe, grid_shape, step_px):
    """Grid of cells whose illuminated footprint touches the phantom support."""
    rows, cols = grid_shape
    out = np.zeros((rows, cols), dtype=bool)
    foot = probe.footprint
    p = probe.size
    for r in range(rows):
        for c in range(cols):
            r0, c0 = r * step_px, c * step_px
            out[r, c] = np.any(phantom.support[r0:r0 + p, c0:c0 + p] & foot)
    return out


def simulate_scan(
    obj,
    probe,
    grid_rows,
    grid_cols,
    step_px,
    *,
    photons=None,
    seed=0,
    pixel_size_um=1.0,
    n_jobs=1,
):
    """Raster scan ``probe`` over ``obj`` and record one pattern per grid cell.

    Frames are in row-major scan order, so frame ``k`` (1-based) sits at row
    ``ceil(k / grid_cols)`` and column ``(k - 1) % grid_cols + 1``.

    Parameters
    ----------
    photons : float, optional
        Mean photon count per frame.  When given, each pattern is rescaled to
        this total under free-space illumination and Poisson noise is drawn with
        a generator seeded by ``seed ^ k``.
    n_jobs : int
        Worker threads; results do not depend on it.
    """
    if grid_rows < 1 or grid_cols < 1:
        raise GeometryError("scan grid must have at least one row and column")
    h, w = (obj.transmission if isinstance(obj, Phantom) else np.asarray(obj)).shape
    p = probe.size
    if (grid_rows - 1) * step_px + p > h or (grid_cols - 1) * step_px + p > w:
        raise GeometryError(
            f"{grid_rows}x{grid_cols} raster with step {step_px} and window {p} exceeds the {h}x{w} object"
        )
    rows, cols = np.divmod(np.arange(grid_rows * grid_cols), grid_cols)
    rows, cols = rows + 1, cols + 1
    offsets = scan_offsets(rows, cols, step_px)
    scale = None
    if photons is not None:
        scale = float(photons) / (p * p * probe.power)

    def frame(k):
        pattern = forward_diffraction(obj, probe, offsets[k])
        if scale is not None:
            rng = np.random.default_rng(int(seed) ^ (k + 1))
            pattern = rng.poisson(pattern * scale).astype(np.float64)
        return pattern.astype(np.float32)

    patterns = np.empty((len(rows), p, p), dtype=np.float32)
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for k, pattern in enumerate(pool.map(frame, range(len(rows)))):
                patterns[k] = pattern
    else:
        for k in range(len(rows)):
            patterns[k] = frame(k)
    return ScanDataset.from_grid(
        patterns, rows, cols, (grid_rows, grid_cols), step_size=step_px * pixel_size_um
    )
