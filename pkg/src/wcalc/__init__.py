"""Computable metrics, derivatives, and conditional flows on spaces of
finitely supported probability measures.

The package is organized around five layers:

* ``measures``: weighted particle clouds and exact optimal transport.
* ``fourier``: the smooth negative-order metric ``rho_F`` and its
  quadrature grids.
* ``gauge``: the certified localized gauge ``rho_sigma`` and the
  perturbed-maximization routine.
* ``calculus``: Lions derivatives, closed-form fields for the metric
  functionals, and finite-difference oracles.
* ``ishii`` / ``filtering``: matrix sandwich checks, jet assembly, and
  Monte Carlo machinery for controlled conditional flows.
"""

from .measures import (
    CouplingPlan,
    ParticleMeasure,
    gaussian_box_mass,
    gaussian_smoothed,
    load_measure,
    measure_from_dict,
    measure_to_dict,
    save_measure,
    unit_variance_outlier_mixture,
    w2,
    w2_sigma,
)
from .fourier import (
    QuadratureGrid,
    ThetaPoint,
    build_grid,
    centered_char,
    char_fn,
    d_F,
    dual_norm_lambda,
    noncompleteness_table,
    rho_F,
    rho_F2,
    rho_F2_parts,
)
from .gauge import (
    GaugeParams,
    d_sigma,
    default_l_max,
    perturbed_maximize,
    rho_sigma,
    rho_sigma_breakdown,
)
from .calculus import (
    Jet,
    MeasureFunctional,
    cross_derivative,
    dmu_psi,
    dmu_psi_tilde,
    dmu_rhoF2,
    dmu_script_L,
    dxmu_psi,
    dxmu_psi_tilde,
    dxmu_rhoF2,
    dxmu_script_L,
    fd_lions_derivative,
    make_integral_functional,
    make_mean_functional,
    make_mean_square_functional,
    partial_hessian,
    psi_pair,
    script_L,
    translation_hessian,
)
from .ishii import (
    DoublingReport,
    SandwichInstance,
    SandwichReport,
    assemble_jets,
    check_sandwich,
    doubling_experiment,
)
from .filtering import (
    ConditionalFlow,
    ControlPath,
    DPPReport,
    FilterModel,
    FlowReport,
    ItoReport,
    ValueReport,
    cost_J,
    dpp_check,
    flow_lipschitz_check,
    hamiltonian_K,
    ito_residual,
    simulate_flow,
    value_estimate,
    weak_equation_residuals,
)
from .models import MODEL_NAMES, build_model

__version__ = "0.1.0"
