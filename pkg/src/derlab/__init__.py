"""derlab: distributional RL as entropy-regularized fitting, on toy MDPs."""

__version__ = "0.1.0"
