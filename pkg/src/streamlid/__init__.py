"""Streaming spoken language identification.

Conformer encoder, recurrent attentive temporal pooling, classifier head,
post-hoc domain adaptation and confidence modeling, with small trainers and
an evaluation harness.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
