"""Landmark estimation of univariate and bivariate transition rates and
probabilities for non-Markov multistate models, with plug-in valuation of
insurance cash flows."""

__version__ = "0.1.0"
