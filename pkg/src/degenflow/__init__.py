"""degenflow: desk-scale numerics for degenerate SDEs with rough drifts.

Modules
-------
model            system definitions (moduli, spectral operators, drifts) and
                 hypothesis validation
linear_flow      exact Gaussian laws, path sampling, the linear semigroup,
                 Hilbert-Schmidt noise diagnostics
bismut           controllability Gramian, perturbation controls, Monte-Carlo
                 derivative estimators, coupling/Girsanov checks
regularization   resolvent, fixed-point field, state transform, Galerkin
                 truncation comparisons
sde              mild-solution integration, drift cutoffs, common-noise and
                 representation experiments, nonlinear Gronwall envelopes
persist          columnar binary + CSV persistence
cli              scenario runner (``degenflow run|list-scenarios|validate``)
"""

from .model import (DriftSpec, Modulus, SpectralModel, build_drift, build_example,
                    classify_modulus, validate_drift_regularity, validate_hypotheses)
from .linear_flow import (GaussianLaw, PathBundle, apply_P0, hs_noise_integral,
                          sample_linear, transition_law, transition_law_quadrature)
from .bismut import (bismut_gradient, bismut_hessian, gramian_Q,
                     perturbation_controls, scaling_exponent, variance_bound_check,
                     verify_coupling)
from .regularization import (FieldGrid, FunctionField, GridSpec, field_grad2,
                             find_contraction_lambda, galerkin_compare, picard_solve,
                             resolvent_apply, theta_forward, theta_inverse)
from .sde import (bihari_bound, coarsen_noise, cutoff_drift, dissipation_envelope,
                  integrate_ensemble, integrate_mild, make_noise,
                  representation_residual, uniqueness_experiment)

__version__ = "0.1.0"
