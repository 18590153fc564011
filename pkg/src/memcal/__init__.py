"""Survey calibration by maximum entropy on the mean (MEM)."""

__version__ = "0.1.0"

from .amem import BasisSpec, ProjectionEstimator, amem_estimate, fit_projection, monomial_basis
from .calibrate import (
    CalibrationProblem,
    CalibrationSolution,
    FeasibilityReport,
    SolverOptions,
    calibrate,
    check_feasibility,
    greg_closed_form,
    solve_dual,
)
from .design import (
    DesignKind,
    Population,
    Sample,
    SamplingDesign,
    delta,
    draw_sample,
    enumerate_design,
    make_uniform_design,
)
from .efficiency import EfficiencyReport, efficiency_report, lemma_functional, variance_lower_bound
from .errors import (
    DomainError,
    InfeasibleError,
    MemcalError,
    SingularityError,
    SizeError,
    SolverError,
    UnsupportedOperationError,
)
from .harness import SimConfig, SimReport, report_table, run_replications
from .instruments import GCFamily, InstrumentSpec, gc_estimate, instrument_estimate
from .priors import PriorFamily, exponential_prior, gaussian_prior, poisson_prior

__all__ = [name for name in dir() if not name.startswith("_")]
