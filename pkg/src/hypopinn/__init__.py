"""HypoPINN: eikonal PINN hypocenter location with Laplace uncertainty."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .eikonal_ref import (TraveltimeField, analytic_constant, analytic_field,
                          analytic_linear_gradient, fmm_solve, reference_field, sample_receivers)
from .laplace import (LaplacePosterior, build_posterior, diag_fisher, ensemble_predict,
                      sample_params)
from .locator import (HypocenterCloud, HypocenterEstimate, cloud_stats, locate, locate_error)
from .neural_core import (Adam, InitScheme, NetworkParams, NetworkSpec, forward,
                          forward_with_input_grad, init_weights, load_params, save_params)
from .pinn import (LossBreakdown, TrainConfig, TrainingDiverged, pde_residual, sample_collocation,
                   total_loss, train_map)
from .velocity_model import (ConstantVelocity, Domain2D, DomainError, Grid2D, GriddedVelocity,
                             LinearGradientVelocity, ReceiverSet, build_layered, surface_receivers)

__version__ = "0.1.0"
