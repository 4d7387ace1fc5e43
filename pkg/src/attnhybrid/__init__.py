"""Convolutional backbones hybridized with self-attention blocks.

The package bundles a float64 autodiff core, the GA/LA/ELA attention blocks
and backbone surgery built on it, a training/evaluation protocol with
statistics, and Grad-CAM / attention-map explanation tooling.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "__version__"]
