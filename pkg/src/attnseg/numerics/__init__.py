from . import kernels
from .autodiff import PROB_FLOOR, Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, gradient_check
from .optim import AdamState, adam_step
from .prob import cross_entropy, sequence_loss, softmax_temperature

__all__ = [
    "PROB_FLOOR", "Tensor", "no_grad", "kernels",
    "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "gradient_check",
    "AdamState", "adam_step",
    "cross_entropy", "sequence_loss", "softmax_temperature",
]
