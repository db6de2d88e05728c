"""RDTE-UNet: boundary-aware segmentation network on a minimal autodiff core."""

from .tensor import Tensor, Tape, ParamStore, gradcheck, tensor_new

__all__ = ["Tensor", "Tape", "ParamStore", "gradcheck", "tensor_new"]
__version__ = "0.1.0"
