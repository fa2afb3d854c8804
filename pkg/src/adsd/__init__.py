"""RGB-D semantic segmentation with attention-based fusion and a dual
supervised decoder, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
