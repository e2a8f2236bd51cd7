"""sbm-eb: empirical Bayes block membership estimation for stochastic blockmodels."""

try:
    from importlib.metadata import version
except ImportError:
    from importlib_metadata import version

__version__ = version("sbm-eb")

__all__ = ["__version__"]
