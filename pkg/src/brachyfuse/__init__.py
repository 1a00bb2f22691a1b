"""Surface registration, composite imaging and seed-implant dosimetry
for paired prostate image studies.

Subpackages
-----------
geometry      contours, masks, voxelization, distance fields
registration  rigid + octree-spline elastic surface registration
fusion        composite slice rendering and contour mapping
dosimetry     point-source dose grids, DVH metrics, plan constraints
stats         exact paired nonparametric tests
fileio        on-disk formats (JSON, CSV, PGM, raw volumes)

The most common entry points are re-exported here; everything else
lives under its subpackage.
"""

from brachyfuse.dosimetry import (
    PairedEvaluation,
    SeedPlan,
    SourceModel,
    check_constraints,
    compare_structures,
    compute_dose_grid,
    compute_dvh,
    dose_at_volume,
    volume_at_dose,
)
from brachyfuse.errors import (
    BrachyFuseError,
    FrameMismatchError,
    GridCoverageError,
    InputError,
    InvalidContourError,
    InversionError,
    ManifestError,
    MappingError,
    NumericalError,
)
from brachyfuse.fusion import composite_slice, map_mri_contours_to_trus
from brachyfuse.geometry import ContourStack, GridSpec, SurfaceModel, voxelize
from brachyfuse.registration import (
    RegistrationConfig,
    TransferFunction,
    generate_phantom,
    register_surfaces,
)
from brachyfuse.stats import spearman_rho, wilcoxon_signed_rank

__version__ = "0.1.0"

__all__ = [
    "BrachyFuseError",
    "InputError",
    "InvalidContourError",
    "FrameMismatchError",
    "GridCoverageError",
    "ManifestError",
    "NumericalError",
    "InversionError",
    "MappingError",
    "ContourStack",
    "GridSpec",
    "SurfaceModel",
    "voxelize",
    "RegistrationConfig",
    "TransferFunction",
    "register_surfaces",
    "generate_phantom",
    "composite_slice",
    "map_mri_contours_to_trus",
    "SourceModel",
    "SeedPlan",
    "PairedEvaluation",
    "compute_dose_grid",
    "compute_dvh",
    "dose_at_volume",
    "volume_at_dose",
    "check_constraints",
    "compare_structures",
    "wilcoxon_signed_rank",
    "spearman_rho",
    "__version__",
]
