"""Multivariate species sampling processes: partitions, partition
probabilities, diagnostics, samplers and a species-discovery bandit."""

from .eppf import DM, DP, GN, PYP, EmpiricalWeights, PredictiveWeights, log_eppf, predictive
from .multivariate import (
    Additive, Hierarchical, Independent, Nested, log_peppf, mgcrp_predictive, sample_array,
)
from .partitions import GroupedSample, SetPartition, canonicalize, grouped_from_observations

__version__ = "0.1.0"

__all__ = [
    "DP", "PYP", "DM", "GN", "EmpiricalWeights", "PredictiveWeights", "log_eppf", "predictive",
    "Independent", "Hierarchical", "Nested", "Additive", "log_peppf", "mgcrp_predictive", "sample_array",
    "SetPartition", "GroupedSample", "canonicalize", "grouped_from_observations",
]
