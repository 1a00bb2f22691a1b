"""Knobs for the rigid and elastic registration stages."""

from __future__ import annotations

from dataclasses import dataclass, fields

from brachyfuse.errors import InputError

# total squared misfit per source point (mm^2) below which a fit counts
# as exact: 1e-8 is a 0.1 um rms on mm-scale anatomy
EXACT_FIT_COST_MM2_PER_POINT = 1e-8


@dataclass(frozen=True)
class RegistrationConfig:
    levels: int = 3
    regularization_weight: float = 0.1  # lambda on membrane residuals, mm^2 units
    max_iterations: int = 50  # per level / per stage
    rel_tolerance: float = 1e-6  # relative cost decrease that counts as converged
    mu_init: float = 1e-3
    mu_decrease: float = 3.0
    mu_increase: float = 4.0
    mu_max: float = 1e8
    subdivide_factor: float = 1.5  # refine cells above this multiple of mean residual
    field_spacing_mm: float = 1.0
    field_padding_mm: float = 20.0
    near_surface_mm: float = 1.0  # below this, exact nearest-neighbor replaces the field
    root_margin_mm: float = 5.0

    def __post_init__(self):
        if self.levels < 1 or self.max_iterations < 1:
            raise InputError("levels and max_iterations must be >= 1")
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and value <= 0:
                raise InputError(f"{f.name} must be positive, got {value}")

    def replace(self, **kw) -> "RegistrationConfig":
        base = {f.name: getattr(self, f.name) for f in fields(self)}
        base.update(kw)
        return RegistrationConfig(**base)
