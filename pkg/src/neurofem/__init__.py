"""Neural surrogates for nonlinear static finite-element deformation.

The toolkit covers the full pipeline: tetrahedral beam meshes, hyperelastic
FEM assembly (St. Venant-Kirchhoff and Neo-Hookean), modal-force dataset
generation, a hand-rolled fully connected network with residual-aware
losses, evaluation metrics, and a hybrid Newton-Raphson solver that uses the
network prediction as its starting point while still guaranteeing a
converged solution.
"""

from .fem import FemSystem
from .materials import (InvertedElementError, Material, NeoHookean,
                        StVenantKirchhoff, make_material)
from .mesh import (Mesh, MeshError, bounding_box_length, generate_beam_mesh,
                   load_mesh, save_mesh)
from .metrics import EvaluationReport, e_max, e_mean, evaluate, snr_min
from .modal import (Dataset, DatasetGenerationError, ModalBasis,
                    eigendecompose, generate_dataset, load_dataset,
                    mask_patch, modal_force, sample_amplitudes, save_dataset,
                    smallest_eigenpairs, verify_dataset)
from .network import (Network, NormalizationSpec, backward, forward,
                      init_network, load_model, make_predictor, predict,
                      prelu, save_model)
from .solver import (LinearSolveError, PredictionOutcome, SolveResult,
                     SolverConfig, hybrid_newton_raphson, newton_raphson,
                     solve_linear)
from .training import (AdamState, TrainConfig, TrainResult, TrainingError,
                       adam_step, loss_residual_add, loss_residual_mul, mse,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Dataset", "DatasetGenerationError", "EvaluationReport",
    "FemSystem", "InvertedElementError", "LinearSolveError", "Material",
    "Mesh", "MeshError", "ModalBasis", "NeoHookean", "Network",
    "NormalizationSpec", "PredictionOutcome", "SolveResult", "SolverConfig",
    "StVenantKirchhoff", "TrainConfig", "TrainResult", "TrainingError",
    "adam_step", "backward", "bounding_box_length", "e_max", "e_mean",
    "eigendecompose", "evaluate", "forward", "generate_beam_mesh",
    "generate_dataset", "hybrid_newton_raphson", "init_network",
    "load_dataset", "load_mesh", "load_model", "loss_residual_add",
    "loss_residual_mul", "make_material", "make_predictor", "mask_patch",
    "modal_force", "mse", "newton_raphson", "predict", "prelu",
    "sample_amplitudes", "save_dataset", "save_mesh", "save_model",
    "smallest_eigenpairs", "snr_min", "solve_linear", "train",
    "verify_dataset",
]
