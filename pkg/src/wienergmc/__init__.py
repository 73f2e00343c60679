"""Monte Carlo laboratory for the continuous directed polymer in mollified space-time white noise."""

__version__ = "0.1.0"
