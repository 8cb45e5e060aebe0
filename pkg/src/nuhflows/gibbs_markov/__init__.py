from .systems import GMSystem, Roof, affine_roof, constant_roof, make_builtin, separation_time, SeparationTime
from .transfer import (
    TransferMatrix, SpectralSample, DefectResult, build_transfer, leading_eigenvalue, lambda_prime,
    invariant_density, twisted_iterate, approx_eigenfunction_defect, defect_horizon, density_cdf,
    induced_roof_mean,
)
