"""qnrkit: quadratic nonconvex reformulation toolkit for nonconvex QPs."""

from .linalg import KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
