"""Hierarchical linear mixed models with Global-Local shrinkage priors,
fit by Gibbs sampling, for death-registration completeness estimation."""

__version__ = "0.1.0"
