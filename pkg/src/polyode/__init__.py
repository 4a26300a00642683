"""Continuous-time networks with polynomial (monomial / shifted Legendre) time-dependent weights."""

from .architectures import Activation, Arch, EvalCounter, ModelConfig, count_trainable, predict
from .basis import BasisKind, Kind, TimeGrid, build_basis_matrix, condition_number
from .gradients import loss, loss_and_grad
from .integrators import StepControl, dopri5_solve
from .optimizer import Model, TrainConfig, init_params, train

__all__ = [
    "Activation", "Arch", "EvalCounter", "ModelConfig", "count_trainable", "predict",
    "BasisKind", "Kind", "TimeGrid", "build_basis_matrix", "condition_number",
    "loss", "loss_and_grad", "StepControl", "dopri5_solve",
    "Model", "TrainConfig", "init_params", "train",
]

__version__ = "0.1.0"
