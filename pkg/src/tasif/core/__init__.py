"""Numeric core: autodiff tensors, the radix-2 FFT pair, Adam and gradient checking."""

from . import tensor as ops
from .fft import complex_modulate, irfft, irfft_t, is_power_of_two, rfft, rfft_t
from .gradcheck import GradCheckReport, NondeterministicLoss, grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "GradCheckReport", "NondeterministicLoss", "ShapeError", "Tensor",
    "adam_step", "complex_modulate", "grad_check", "irfft", "irfft_t", "is_power_of_two",
    "no_grad", "ops", "rfft", "rfft_t",
]
