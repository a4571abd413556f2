"""Membership-privacy experiments comparing causal and associational classifiers
trained on data sampled from discrete Bayesian networks."""

__version__ = "0.1.0"
