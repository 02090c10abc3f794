"""Two-stage time-series forecasting with per-segment mixtures of LoRA experts.

A short-horizon foundation model is pre-trained once, frozen, and then
adapted to each contiguous block of forecast steps by mixing shared
low-rank expert matrices with learnable per-segment weights.  The package
also ships the two classical baselines (one-shot multi-output forecasting
and recursive one-step forecasting) plus numerical analyses of why they
differ: the rank bottleneck of a shared linear head, adapter parameter
counts, and the variance decomposition of averaged per-step losses.
"""

__version__ = "0.1.0"
