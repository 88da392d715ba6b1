"""Pick the informative frames of a ptychography scan before reconstructing it.

Absorption (total intensity) and standardized center-of-mass magnitude are
computed per diffraction pattern, mapped onto the scan grid and split into two
clusters each; the union of the absorbing and the strongly scattering clusters
is the region of interest.
"""

__version__ = "0.1.0"

from .clustering import (
    KMeans2,
    KMeansResult,
    RoiMask,
    RoiSelector,
    adjust_border,
    kmeans2,
    roi_fraction,
    select_absorption_roi,
    select_scatter_roi,
    union_roi,
)
from .dataset import ScanDataset, ScanPosition, filter_dataset, load_dataset, save_dataset
from .exceptions import (
    DataError,
    DegenerateInputError,
    DomainError,
    EmptySelectionError,
    FormatError,
    GeometryError,
    NumericalError,
    PtyRoiError,
    SizeError,
    TruncationError,
    UndefinedCenterOfMassError,
)
from .recon import EPIEReconstructor, ReconImage, epie_reconstruct, phase_image, phase_ssim, ssim
from .simulator import Phantom, Probe, circular_probe, forward_diffraction, shepp_logan, simulate_scan
from .stats import (
    CoMTable,
    DiffractionStats,
    StatMap,
    build_stat_map,
    center_of_mass,
    com_magnitude,
    log_transform,
    mean_filter_3x3,
    standardize,
    total_intensity,
)
