"""Frame-sampling laboratory: policies, brute-force oracle, redundancy study and a learned sampler."""

from .core import CapacityError, InvalidArgumentError, binomial, softmax, top_n_indices

__version__ = "0.1.0"

__all__ = ["CapacityError", "InvalidArgumentError", "binomial", "softmax", "top_n_indices"]
