"""Whole-image hyperspectral classification with balanced mask sampling, on a small numpy autodiff core."""

__version__ = "0.1.0"
