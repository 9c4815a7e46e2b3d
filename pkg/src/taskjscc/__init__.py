"""Task-oriented joint source-channel coding with a learnable QAM grid.

Submodules: ``constellation`` (grid, quantizer, scale fit), ``channel``
(AWGN / block Rayleigh simulation), ``neural`` (MLPs with explicit
gradients), ``objectives`` (bottleneck losses), ``task_env`` (synthetic
data and frozen agent) and ``experiment`` (pipelines, persistence).
"""
__version__ = "0.1.0"
