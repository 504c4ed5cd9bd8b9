"""Text-prompted referring segmentation, trainable at desk scale."""

from .tensor import Tensor, Tape, backward, no_grad, record

__all__ = ["Tensor", "Tape", "backward", "no_grad", "record"]
__version__ = "0.1.0"
