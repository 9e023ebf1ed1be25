"""Graph-spectral k-NN imputation for wind-farm sensor panels."""

__version__ = "0.1.0"
