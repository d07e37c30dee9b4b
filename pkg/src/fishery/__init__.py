"""Size-spectrum growth calibration and equilibrium harvesting control."""

from .calibration import (
    FittedModel,
    SurveyDataset,
    fit_allometry,
    fit_growth,
    load_dataset,
    moment_match,
    wls_error,
)
from .control import (
    BoundViolationError,
    ControlProblem,
    Lattice,
    SolverDivergenceError,
    SolverOutput,
    check_stability_bound,
    optimal_intensity,
    solve,
    stability_limit,
    utility,
    utility_inv,
    utility_inv_deriv,
    utility_inv_tangent_gap,
)
from .growth import (
    CurveVariant,
    GrowthCurve,
    growth_fraction,
    growth_fraction_ode_oracle,
    logistic,
    logistic_time_varying,
    von_bertalanffy,
)
from .mc import SimulationConfig, SimulationResult, estimate_terminal_utility, simulate_paths
from .spectrum import (
    Allometry,
    SizeSpectrum,
    gamma_quantile,
    mean_weight,
    pdf_asymptotic_weight,
    pdf_weight,
    quantile_weight,
    quantize_weight,
    regularized_gamma_p,
    std_weight,
    var_weight,
)

__version__ = "0.1.0"
