"""hybridtomo: a finite-element laboratory for linearised hybrid
impedance tomography on the unit disc.

Reconstructs conductivity perturbations from interior data of the form
sigma * |grad u|**p with a first-order least-squares method, decides at
the symbol level when the linearised problem is elliptic, and, when it is
not, predicts and measures the directions in which reconstruction
artifacts propagate."""

__version__ = "0.1.0"

from .fields import FemField, Provenance, field_sub
from .forward import (BackgroundState, BoundaryCondition, ForwardSolution,
                      compute_interior_data, harmonic_extension,
                      make_background, solve_forward_mixed,
                      solve_forward_primal)
from .inverse import (InverseCrimeError, LinearizedProblem,
                      ReconstructionResult, apply_linearised_forward,
                      assemble_ls_system, solve_reconstruction)
from .mesh import (Mesh2D, MeshError, PointNotFoundError, generate_disc_mesh,
                   locate_point, project_field, refine_uniform)
from .microlocal import (Bicharacteristic, SymbolQuery, is_elliptic_single,
                         loss_directions, normal_symbol, principal_symbol,
                         real_principal_type_check, trace_bicharacteristic)
from .phantom import RectPhantom, WavefrontDescription, evaluate_phantom, wavefront
from .experiments import (ExperimentConfig, StageError, StreakReport,
                          mass_fraction, run_experiment, streak_metric)
