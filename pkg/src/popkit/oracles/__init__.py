"""Exact reference filters used to validate the particle engine."""
from .enumeration import EnumeratedDistribution, EnumerationResult, enumerate_filter, total_variation
from .kalman import GaussianBelief, KalmanResult, LinearGaussianModel, kalman_filter

__all__ = ["EnumeratedDistribution", "EnumerationResult", "enumerate_filter", "total_variation",
           "GaussianBelief", "KalmanResult", "LinearGaussianModel", "kalman_filter"]
