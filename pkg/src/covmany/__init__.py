"""Many-sample tests for proportionality and equality of large covariance matrices."""

__version__ = "0.1.0"
