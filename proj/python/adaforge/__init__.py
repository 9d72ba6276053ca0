"""Adversarial domain adaptation: Python surface of the C++ core.

The heavy lifting (autodiff, split models, routed objectives, datasets,
training) lives in the compiled ``_adaforge`` extension; this package simply
re-exports it.
"""

from ._adaforge import (
    __version__,
    canonical_config,
    confusion_grad,
    confusion_loss,
    curves_csv,
    gradcheck,
    make_dataset,
    minimax_grad,
    minimax_loss,
    train,
)

__all__ = [
    "__version__",
    "canonical_config",
    "confusion_grad",
    "confusion_loss",
    "curves_csv",
    "gradcheck",
    "make_dataset",
    "minimax_grad",
    "minimax_loss",
    "train",
]
