"""Online aggregation of expert forecasts for long-short decile portfolios."""

__version__ = "0.1.0"
