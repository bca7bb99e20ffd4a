"""Two-stage stochastic Volt-VAR optimization with a learned recourse-cost surrogate."""

__version__ = "0.1.0"
