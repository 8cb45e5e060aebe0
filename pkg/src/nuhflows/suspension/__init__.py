from .models import (
    SuspensionFlow, TwoSidedModel, FiberRoof, fiber_roof, Observable, Conjugacy, TruncatedRoof,
    chi, chi_sup, tilde_phi, conjugacies, flow_eval, truncate_roof, temporal_distance,
    branch_mass, branch_roof_range, roof_tail_inequality, TailInequalityCheck,
)
from .periodic import (
    PeriodicOrbitRecord, CFResult, GoodAsymptoticsFit, BoxDimension, periodic_point, periodic_orbits,
    diophantine_ratio, good_asymptotics_fit, tdf_range_dimension,
)
from .lsv_flow import LSVFlow, bump_observable
from .diagnostics import BilliardSection, HolderReport, lift_observable, holder_diagnostics
