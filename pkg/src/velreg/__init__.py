"""Stationary-velocity diffeomorphic image registration.

Registration is posed as PDE-constrained optimization: transport the template
along a stationary velocity field (semi-Lagrangian), invert with a
Gauss-Newton-Krylov solver under spectral H1 regularization, and pick the
regularization weights with a Jacobian-bounded two-stage search or the faster
decade-ladder continuation.
"""

from .errors import (GridError, ObjectiveError, ResampleError, SearchError,
                     TransportError, VelregError, VolumeIOError)
from .grid import (Grid, LabelMap, ScalarField, VectorField, make_grid,
                   prolong_spectral, restrict)
from .diffops import (RegOperators, SpectralWorkspace, apply_A, apply_K,
                      apply_inv_shifted_A, fd8_divergence, fd8_gradient)
from .transport import (Characteristics, TransportConfig, TransportOperators,
                        interpolate, jacobian_determinant, solve_adjoint,
                        solve_incremental_state, solve_state,
                        solve_state_series, trace_characteristics)
from .optim import (ArmijoConfig, ObjectiveState, RegistrationConfig,
                    SolverDiagnostics, evaluate_objective,
                    gauss_newton_register, hessian_matvec, pcg_solve,
                    reduced_gradient, relative_residual)
from .autoparam import (SearchConfig, SearchResult, continuation_register,
                        in_bounds, search_beta_v, search_beta_w,
                        search_parameters)
from .synth import (SynthSpec, assoc_legendre, make_reference, make_template,
                    make_velocity, spherical_harmonic_magnitude,
                    transport_labels)
from .metrics import (DiceReport, dice, dice_averages, jacobian_stats,
                      residual_image)
from .experiment import ExperimentPlan, run_experiment
from .volio import load_nifti, load_volume, save_volume

__version__ = "0.1.0"
